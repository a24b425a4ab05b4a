//! Log records go to standard error and, once a run directory exists, to a
//! log file inside it.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

static LOG_FILE: Mutex<Option<File>> = Mutex::new(None);

struct Tee;

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(f) = LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            // a failing log file must not abort the run
            let _ = f.write_all(buf);
        }
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            let _ = f.flush();
        }
        io::stderr().flush()
    }
}

/// Installs the logger; `RUST_LOG` overrides the default level.
pub fn init(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Pipe(Box::new(Tee)))
        .try_init();
}

pub fn attach(path: &Path) -> io::Result<()> {
    let file = File::create(path)?;
    *LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()) = Some(file);
    Ok(())
}

pub fn close() {
    log::logger().flush();
    LOG_FILE.lock().unwrap_or_else(|p| p.into_inner()).take();
}
