use std::process::exit;

fn main() {
    exit(forsim::cli::run(std::env::args_os()));
}
