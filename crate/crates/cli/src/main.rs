fn main() {
    std::process::exit(erda_lab_cli::run(std::env::args_os()));
}
