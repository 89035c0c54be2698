fn main() {
    std::process::exit(featviz_cli::run(std::env::args_os()));
}
