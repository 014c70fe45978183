fn main() {
    std::process::exit(mvsde::cli::main_with_args(std::env::args_os()));
}
