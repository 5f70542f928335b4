use std::fmt;

use sagan_core::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A failed command: the process exit code and a one-line message.
#[derive(Debug)]
pub struct Fail {
    pub code: i32,
    pub message: String,
}

impl Fail {
    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

pub fn usage(message: impl Into<String>) -> Fail {
    Fail {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if matches!(e, Error::InvalidArgument(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Fail {
            code,
            message: one_line(&e.to_string()),
        }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::data(one_line(&e.to_string()))
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail::data(one_line(&e.to_string()))
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes() {
        assert_eq!(
            Fail::from(Error::NonFinite { op: "conv" }).code,
            EXIT_NUMERICAL
        );
        assert_eq!(
            Fail::from(Error::NonFiniteLoss {
                term: "l_r",
                step: 3
            })
            .code,
            EXIT_NUMERICAL
        );
        assert_eq!(
            Fail::from(Error::InvalidArgument("x".into())).code,
            EXIT_USAGE
        );
        assert_eq!(Fail::from(Error::Data("x".into())).code, EXIT_DATA);
        assert_eq!(Fail::from(Error::Checkpoint("x".into())).code, EXIT_DATA);
    }

    #[test]
    fn message_is_one_line() {
        assert_eq!(one_line("a\n  b\tc"), "a b c");
    }
}
