use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};

use flitext::Error;

/// Result of every fallible call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlitextStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Dimension = 10,
    Precondition = 11,
    Numeric = 12,
    Usage = 13,
    Config = 14,
    Data = 15,
    Divergence = 16,
    Format = 17,
    Io = 18,
    Panic = 99,
}

impl From<&Error> for FlitextStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => FlitextStatus::Dimension,
            Error::Precondition(_) => FlitextStatus::Precondition,
            Error::Numeric(_) => FlitextStatus::Numeric,
            Error::Usage(_) => FlitextStatus::Usage,
            Error::Config(_) => FlitextStatus::Config,
            Error::Data { .. } => FlitextStatus::Data,
            Error::Divergence { .. } => FlitextStatus::Divergence,
            Error::Format(_) => FlitextStatus::Format,
            Error::Io { .. } => FlitextStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Failure carried back to the C boundary.
pub(crate) struct Failure(pub FlitextStatus, pub String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

/// Runs `f`, records any failure as the thread's last error and maps it to a status.
pub(crate) fn guard<F>(f: F) -> FlitextStatus
where
    F: FnOnce() -> Result<(), Failure> + UnwindSafe,
{
    clear_error();
    match catch_unwind(f) {
        Ok(Ok(())) => FlitextStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FlitextStatus::Panic
        }
    }
}

pub(crate) fn null(name: &str) -> Failure {
    Failure(FlitextStatus::NullArgument, format!("{name} is null"))
}

/// Borrows a C string argument.
///
/// # Safety
/// `p` must be null or point to a nul-terminated string.
pub(crate) unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(FlitextStatus::InvalidUtf8, format!("{name}: {e}")))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn flitext_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}
