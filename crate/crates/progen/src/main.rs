fn main() {
    std::process::exit(progen::cli::run());
}
