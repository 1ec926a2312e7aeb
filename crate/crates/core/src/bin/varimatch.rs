fn main() {
    std::process::exit(varimatch::cli::run(std::env::args_os()));
}
