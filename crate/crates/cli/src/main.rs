fn main() {
    std::process::exit(wallnet_cli::run(std::env::args_os()));
}
