use std::process::exit;

fn main() {
    exit(corrspec::cli::run(std::env::args_os()));
}
