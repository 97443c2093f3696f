fn main() {
    std::process::exit(varcf::cli::run(std::env::args_os()));
}
