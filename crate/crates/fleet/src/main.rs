fn main() {
    std::process::exit(fleetnav::cli::main_with_args(std::env::args_os()));
}
