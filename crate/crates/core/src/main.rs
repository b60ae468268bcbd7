fn main() {
    std::process::exit(sticky_crowd::cli::main_with_args(std::env::args_os()));
}
