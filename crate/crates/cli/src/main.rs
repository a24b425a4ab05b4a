fn main() {
    std::process::exit(mlcgcn_cli::run(std::env::args_os()));
}
