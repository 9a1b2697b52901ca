fn main() {
    std::process::exit(bbc::cli::main());
}
