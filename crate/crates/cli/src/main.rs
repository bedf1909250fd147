fn main() {
    std::process::exit(cranebench_cli::run(std::env::args_os()));
}
