use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievedVia {
    Api,
    ReverseSearch,
    Manual,
}

/// One source-attributed caption of an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub text: String,
    pub source: String,
    pub retrieved_via: RetrievedVia,
    #[serde(default)]
    pub published_year: Option<i32>,
}

impl CaptionRecord {
    pub fn new(text: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            source: source.into(),
            retrieved_via: RetrievedVia::Api,
            published_year: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Invalid("caption text is empty".into()));
        }
        if self.source.trim().is_empty() {
            return Err(Error::Invalid("caption source is empty".into()));
        }
        Ok(())
    }
}

/// A captioned image, the unit of training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: String,
    pub captions: Vec<CaptionRecord>,
    /// Set by the loader when the referenced image file does not exist.
    #[serde(skip)]
    pub missing_image: bool,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.trim().is_empty() {
            return Err(Error::Invalid("image_id is empty".into()));
        }
        if self.captions.is_empty() {
            return Err(Error::Invalid(format!(
                "image {:?} has no captions",
                self.image_id
            )));
        }
        self.captions.iter().try_for_each(CaptionRecord::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OocLabel {
    Ooc,
    NotOoc,
}

impl OocLabel {
    pub fn from_bool(ooc: bool) -> Self {
        if ooc {
            OocLabel::Ooc
        } else {
            OocLabel::NotOoc
        }
    }

    pub fn is_ooc(self) -> bool {
        self == OocLabel::Ooc
    }
}

/// An image with two captions, the unit of out-of-context evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestTriplet {
    pub image_id: String,
    pub image_path: String,
    pub caption1: CaptionRecord,
    pub caption2: CaptionRecord,
    #[serde(default)]
    pub label: Option<OocLabel>,
    #[serde(skip)]
    pub missing_image: bool,
}

impl TestTriplet {
    pub fn validate(&self) -> Result<()> {
        self.caption1.validate()?;
        self.caption2.validate()?;
        if self.caption1.text == self.caption2.text {
            return Err(Error::Invalid(format!(
                "triplet for {:?} has identical captions",
                self.image_id
            )));
        }
        Ok(())
    }
}
