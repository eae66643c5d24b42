fn main() {
    std::process::exit(hilbyte_cli::run(std::env::args_os()));
}
