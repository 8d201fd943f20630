use std::fmt;

use serde::{Deserialize, Serialize};

use super::{pair_mate, SceneSpec, NUM_CLASSES};
use crate::{Error, Result};

/// Answer vocabulary; any configured vocabulary slots beyond these are unused.
pub const ANSWERS: [&str; 7] = ["zero", "one", "two", "three", "four", "yes", "no"];
pub const ANSWER_YES: usize = 5;
pub const ANSWER_NO: usize = 6;

pub fn answer_index(word: &str) -> Option<usize> {
    ANSWERS.iter().position(|&a| a == word)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
    AudioVisual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Visual, Modality::AudioVisual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::AudioVisual => "audio_visual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// How many instruments are sounding?
    CountSounding,
    /// How many kinds of instrument are in the video?
    CountTypes,
    /// Is there a sounding A?
    Existential,
    /// Is A louder than B?
    LouderThan,
    /// Does the first sound come from the left?
    FirstSoundingSide,
    /// Is A playing throughout?
    AlwaysPlaying,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::CountSounding,
        Template::CountTypes,
        Template::Existential,
        Template::LouderThan,
        Template::FirstSoundingSide,
        Template::AlwaysPlaying,
    ];

    pub fn index(self) -> usize {
        Template::ALL.iter().position(|&t| t == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::CountSounding => "count_sounding",
            Template::CountTypes => "count_types",
            Template::Existential => "existential",
            Template::LouderThan => "louder_than",
            Template::FirstSoundingSide => "first_sounding_side",
            Template::AlwaysPlaying => "always_playing",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Template::CountSounding | Template::LouderThan => Modality::Audio,
            Template::CountTypes => Modality::Visual,
            Template::Existential | Template::FirstSoundingSide | Template::AlwaysPlaying => Modality::AudioVisual,
        }
    }

    /// Number of class arguments.
    pub fn arity(self) -> usize {
        match self {
            Template::CountSounding | Template::CountTypes | Template::FirstSoundingSide => 0,
            Template::Existential | Template::AlwaysPlaying => 1,
            Template::LouderThan => 2,
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub template: Template,
    /// Class references.
    pub args: Vec<usize>,
    pub answer: usize,
}

impl QuestionSpec {
    pub fn modality(&self) -> Modality {
        self.template.modality()
    }
}

/// Packed per-sample tag: modality in bits 0-1, template in bits 2-4 and the
/// frequency-critical flag in bit 7.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionType(u8);

impl QuestionType {
    const CRITICAL: u8 = 0x80;

    pub fn new(template: Template, critical: bool) -> Self {
        let modality = Modality::ALL.iter().position(|&m| m == template.modality()).expect("listed") as u8;
        let mut bits = modality | (template.index() as u8) << 2;
        if critical {
            bits |= Self::CRITICAL;
        }
        QuestionType(bits)
    }

    pub fn from_byte(byte: u8) -> Result<Self> {
        let template = Template::ALL
            .get(((byte >> 2) & 0b111) as usize)
            .ok_or_else(|| Error::Format(format!("question type byte {byte:#04x} names no template")))?;
        let tag = QuestionType::new(*template, byte & Self::CRITICAL != 0);
        if tag.0 != byte {
            return Err(Error::Format(format!("question type byte {byte:#04x} is inconsistent")));
        }
        Ok(tag)
    }

    pub fn byte(self) -> u8 {
        self.0
    }

    pub fn template(self) -> Template {
        Template::ALL[((self.0 >> 2) & 0b111) as usize]
    }

    pub fn modality(self) -> Modality {
        self.template().modality()
    }

    pub fn is_frequency_critical(self) -> bool {
        self.0 & Self::CRITICAL != 0
    }
}

fn yes_no(b: bool) -> usize {
    if b {
        ANSWER_YES
    } else {
        ANSWER_NO
    }
}

fn count(n: usize) -> Result<usize> {
    if n <= 4 {
        Ok(n)
    } else {
        Err(Error::invalid("answer_oracle", format!("count {n} has no answer word")))
    }
}

/// Rule-based answer.
///
/// Ties resolve to "no": equal loudness in `louder_than`, several instruments
/// sharing the earliest onset in `first_sounding_side`. A patch is on the left
/// when its centre lies strictly left of the midline.
pub fn answer_oracle(scene: &SceneSpec, q: &QuestionSpec) -> Result<usize> {
    if q.args.len() != q.template.arity() {
        return Err(Error::invalid(
            "answer_oracle",
            format!("{} takes {} arguments, got {}", q.template, q.template.arity(), q.args.len()),
        ));
    }
    if let Some(&bad) = q.args.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::DanglingReference(format!("class {bad} does not exist")));
    }
    let present = |c: usize| {
        scene
            .find_class(c)
            .ok_or_else(|| Error::DanglingReference(format!("{} refers to class {c}, absent from the scene", q.template)))
    };
    match q.template {
        Template::CountSounding => count(scene.instruments.iter().filter(|i| i.is_sounding()).count()),
        Template::CountTypes => {
            let mut classes: Vec<usize> = scene.instruments.iter().map(|i| i.class).collect();
            classes.sort_unstable();
            classes.dedup();
            count(classes.len())
        }
        Template::Existential => Ok(yes_no(
            scene.instruments.iter().any(|i| i.class == q.args[0] && i.is_sounding()),
        )),
        Template::LouderThan => {
            let (a, b) = (present(q.args[0])?, present(q.args[1])?);
            Ok(yes_no(a.loudness > b.loudness))
        }
        Template::FirstSoundingSide => {
            let Some(first) = scene.instruments.iter().filter_map(|i| i.onset()).min() else {
                return Ok(ANSWER_NO);
            };
            let mut earliest = scene.instruments.iter().filter(|i| i.onset() == Some(first));
            let lead = earliest.next().expect("minimum exists");
            if earliest.next().is_some() {
                return Ok(ANSWER_NO);
            }
            Ok(yes_no(2 * lead.position + 1 < scene.patches))
        }
        Template::AlwaysPlaying => Ok(yes_no(present(q.args[0])?.schedule.iter().all(|&a| a))),
    }
}

/// An existential question about a critical-pair class in a scene where a
/// member of that pair is sounding: only the frequency bands tell which one.
pub fn is_frequency_critical(scene: &SceneSpec, q: &QuestionSpec) -> bool {
    if q.template != Template::Existential {
        return false;
    }
    let Some(mate) = q.args.first().and_then(|&a| pair_mate(a)) else {
        return false;
    };
    let a = q.args[0];
    scene
        .instruments
        .iter()
        .any(|i| (i.class == a || i.class == mate) && i.is_sounding())
}
