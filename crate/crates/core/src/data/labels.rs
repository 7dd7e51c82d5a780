use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};

pub const PAD_TOKEN: usize = 0;
pub const UNK_TOKEN: usize = 1;
pub const PAD_TAG: usize = 0;
pub const BOS_TAG: usize = 1;
pub const UNK_TAG: usize = 2;

const PAD: &str = "<pad>";
const UNK: &str = "<unk>";
const BOS: &str = "<bos>";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_items(items: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, s) in items.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Load(format!("duplicate label {s:?}")));
            }
        }
        Ok(Vocab { items, index })
    }

    fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Bidirectional token, slot-tag and intent maps built from a training split.
///
/// Token ids 0 and 1 are `<pad>` and `<unk>`. Slot ids 0, 1 and 2 are
/// `<pad>`, `<bos>` and `<unk>`. Intents occupy `0..num_intents()`; the id
/// `num_intents()` is the unknown intent and never appears in the classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMaps {
    tokens: Vocab,
    slots: Vocab,
    intents: Vocab,
}

#[derive(Serialize, Deserialize)]
struct LabelMapsFile {
    tokens: Vec<String>,
    slots: Vec<String>,
    intents: Vec<String>,
}

impl LabelMaps {
    pub fn build(train: &[Example]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyBatch("cannot build label maps from an empty split".into()));
        }
        let mut toks = BTreeSet::new();
        let mut tags = BTreeSet::new();
        let mut intents = BTreeSet::new();
        for ex in train {
            toks.extend(ex.tokens.iter().cloned());
            tags.extend(ex.slots.iter().cloned());
            intents.insert(ex.intent.clone());
        }
        let reserved = |r: &[&str], rest: BTreeSet<String>| {
            r.iter()
                .map(|s| s.to_string())
                .chain(rest.into_iter().filter(|s| !r.contains(&s.as_str())))
                .collect::<Vec<_>>()
        };
        Ok(LabelMaps {
            tokens: Vocab::from_items(reserved(&[PAD, UNK], toks))?,
            slots: Vocab::from_items(reserved(&[PAD, BOS, UNK], tags))?,
            intents: Vocab::from_items(intents.into_iter().collect())?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.items.len()
    }

    /// Size of the tag output layer, reserved ids included.
    pub fn num_tag_ids(&self) -> usize {
        self.slots.items.len()
    }

    /// Distinct training slot tags, excluding reserved entries.
    pub fn num_slot_types(&self) -> usize {
        self.slots.items.len() - 3
    }

    pub fn num_intents(&self) -> usize {
        self.intents.items.len()
    }

    pub fn unk_intent(&self) -> usize {
        self.intents.items.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.tokens.get(token).unwrap_or(UNK_TOKEN)
    }

    pub fn slot_id(&self, tag: &str) -> usize {
        match self.slots.get(tag) {
            Some(id) if id != PAD_TAG && id != BOS_TAG => id,
            _ => UNK_TAG,
        }
    }

    pub fn intent_id(&self, intent: &str) -> usize {
        self.intents.get(intent).unwrap_or(self.unk_intent())
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.items.get(id).map_or(UNK, String::as_str)
    }

    pub fn slot(&self, id: usize) -> &str {
        self.slots.items.get(id).map_or(UNK, String::as_str)
    }

    pub fn intent(&self, id: usize) -> &str {
        self.intents.items.get(id).map_or(UNK, String::as_str)
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slots.items
    }

    pub fn intent_names(&self) -> &[String] {
        &self.intents.items
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = LabelMapsFile {
            tokens: self.tokens.items.clone(),
            slots: self.slots.items.clone(),
            intents: self.intents.items.clone(),
        };
        fs::write(path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: LabelMapsFile = serde_json::from_slice(&bytes)?;
        if file.tokens.get(..2) != Some(&[PAD.to_string(), UNK.to_string()][..])
            || file.slots.get(..3) != Some(&[PAD.to_string(), BOS.to_string(), UNK.to_string()][..])
        {
            return Err(Error::Load(format!("{}: reserved label entries missing", path.display())));
        }
        Ok(LabelMaps {
            tokens: Vocab::from_items(file.tokens)?,
            slots: Vocab::from_items(file.slots)?,
            intents: Vocab::from_items(file.intents)?,
        })
    }
}
