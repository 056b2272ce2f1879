fn main() {
    std::process::exit(pooling_harness::cli::main_with_args(std::env::args_os()));
}
