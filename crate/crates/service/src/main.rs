fn main() {
    std::process::exit(rxdialog_service::cli::run(std::env::args_os()));
}
