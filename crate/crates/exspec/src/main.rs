fn main() {
    std::process::exit(exspec::cli::run());
}
