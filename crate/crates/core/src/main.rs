//! Binary entry point: parse, dispatch, print, and map failures onto the
//! documented exit codes (2 config/shape, 3 data/protocol/format, 4
//! numeric, 1 I/O).

use babymamba::cli::{run, Cli};
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => print!("{output}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
