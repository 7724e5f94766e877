fn main() {
    std::process::exit(stadion::cli::main_with_args(std::env::args_os()));
}
