fn main() {
    std::process::exit(cpforge_cli::run(std::env::args_os()));
}
