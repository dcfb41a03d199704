fn main() {
    std::process::exit(cactus::cli::main_with_args(std::env::args_os()));
}
