fn main() {
    std::process::exit(honest_ate::cli::main_with_args(std::env::args_os()));
}
