fn main() {
    if let Err(e) = dagnat_cli::run(std::env::args_os()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
