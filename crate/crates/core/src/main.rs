fn main() {
    std::process::exit(fibspec::cli::main_with_args(std::env::args()));
}
