//! Support code for the acceptance run: drives the command line in-process.

use haarscan::cli::{run_args, CliError};

/// Runs one `haarscan` invocation and returns its standard output.
pub fn run_cli(args: &[&str]) -> Result<String, CliError> {
    let mut out = Vec::new();
    run_args(args.iter().copied(), &mut out)?;
    Ok(String::from_utf8(out).expect("CLI output is UTF-8"))
}

/// As [`run_cli`], panicking with the command line on failure.
pub fn cli(args: &[&str]) -> String {
    run_cli(args)
        .unwrap_or_else(|e| panic!("haarscan {args:?} failed (exit {}): {e}", e.exit_code()))
}
