fn main() {
    std::process::exit(mpccl::cli::run_cli(std::env::args_os()));
}
