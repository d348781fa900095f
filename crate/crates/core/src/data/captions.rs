//! Caption providers for the text branch.
//!
//! Captions are normally produced offline and stored in a [`FeatureBank`].
//! A provider turns `(image path, label, prompt)` into one caption string.
//!
//! [`FeatureBank`]: super::FeatureBank

use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};

/// Prompt template; `<label>` is replaced by the concept label.
pub const PROMPT_TEMPLATE: &str =
    "Describe only what is directly visible in the image of <label> in one short sentence.";

pub fn render_prompt(label: &str) -> String {
    PROMPT_TEMPLATE.replace("<label>", label)
}

pub trait CaptionProvider {
    fn caption(&self, image: &Path, label: &str, prompt: &str) -> Result<String>;
}

/// Deterministic stand-in that ignores the image.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubCaptioner;

impl CaptionProvider for StubCaptioner {
    fn caption(&self, _image: &Path, label: &str, _prompt: &str) -> Result<String> {
        Ok(format!("a photo of {label}"))
    }
}

/// Runs `program args... <image> <label> <prompt>` and takes trimmed stdout.
#[derive(Debug, Clone)]
pub struct CommandCaptioner {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CaptionProvider for CommandCaptioner {
    fn caption(&self, image: &Path, label: &str, prompt: &str) -> Result<String> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(image)
            .arg(label)
            .arg(prompt)
            .output()
            .map_err(|e| Error::io(self.program.display().to_string(), e))?;
        if !out.status.success() {
            return Err(Error::Format(format!(
                "caption command {} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8(out.stdout)
            .map_err(|_| Error::Format("caption command wrote non-UTF-8 output".into()))?;
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Format(format!("empty caption for `{label}`")));
        }
        Ok(text.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_deterministic() {
        let p = StubCaptioner;
        let a = p.caption(Path::new("x.jpg"), "aardvark", &render_prompt("aardvark")).unwrap();
        assert_eq!(a, "a photo of aardvark");
        assert_eq!(a, p.caption(Path::new("y.jpg"), "aardvark", "").unwrap());
    }

    #[test]
    fn prompt_substitutes_label() {
        assert_eq!(
            render_prompt("kettle"),
            "Describe only what is directly visible in the image of kettle in one short sentence."
        );
    }

    #[cfg(unix)]
    #[test]
    fn command_provider_reads_stdout() {
        let p = CommandCaptioner {
            program: "sh".into(),
            args: vec!["-c".into(), "echo \"a $1 on a table\"".into(), "sh".into()],
        };
        // $1 is the image path after the -c script name placeholder.
        assert_eq!(p.caption(Path::new("cup"), "cup", "ignored").unwrap(), "a cup on a table");
        let failing = CommandCaptioner {
            program: "sh".into(),
            args: vec!["-c".into(), "exit 3".into(), "sh".into()],
        };
        assert!(failing.caption(Path::new("a"), "b", "c").is_err());
    }
}
