fn main() {
    std::process::exit(popcov::cli::main())
}
