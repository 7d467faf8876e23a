fn main() {
    std::process::exit(hopbound::cli::main_with_args(std::env::args_os()));
}
