fn main() {
    std::process::exit(common_interest::cli::run(std::env::args_os()));
}
