fn main() {
    std::process::exit(prefdn::cli::main_exit_code());
}
