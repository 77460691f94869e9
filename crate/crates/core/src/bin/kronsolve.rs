fn main() {
    std::process::exit(kronsolve::cli::main_with_args(std::env::args_os().collect()));
}
