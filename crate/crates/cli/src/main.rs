fn main() {
    std::process::exit(railinspect_cli::run(std::env::args_os()));
}
