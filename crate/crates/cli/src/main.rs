fn main() {
    std::process::exit(vdmforge_cli::run(std::env::args_os()));
}
