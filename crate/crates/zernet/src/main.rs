fn main() {
    std::process::exit(zernet::cli::run());
}
