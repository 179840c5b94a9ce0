fn main() {
    std::process::exit(sphardy::cli::main_with_args(std::env::args_os()));
}
