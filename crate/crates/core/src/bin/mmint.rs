fn main() {
    std::process::exit(mmint::cli::main_with_args(std::env::args_os()));
}
