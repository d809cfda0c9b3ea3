fn main() {
    std::process::exit(eyesim::cli::main_with_args(std::env::args_os()));
}
