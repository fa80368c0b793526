fn main() {
    std::process::exit(fusionattn::cli::run(std::env::args_os()));
}
