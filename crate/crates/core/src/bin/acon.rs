fn main() {
    std::process::exit(acon::cli::main_with(std::env::args_os()));
}
