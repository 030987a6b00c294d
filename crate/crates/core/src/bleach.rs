//! Bleached sentence generation and experimental list construction.
//!
//! Every non-target word of a frame is a minimal-content placeholder
//! (`someone`, `something`, `do`, `happen`); only the verb slot varies. Frame
//! templates and the irregular-verb lexicon are data files, so the rendered
//! sentences can be checked byte-for-byte against the published materials.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Marker for the verb position in a template.
pub const SLOT: &str = "{V}";

pub const PILOT_FRAMES_TSV: &str = include_str!("../data/frames_pilot.tsv");
pub const MEGA_FRAMES_TSV: &str = include_str!("../data/frames_mega.tsv");
pub const IRREGULAR_TSV: &str = include_str!("../data/irregular.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MorphTag {
    Past,
    PassiveParticiple,
    Bare,
}

impl MorphTag {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "PAST" => Some(MorphTag::Past),
            "PASSIVE_PARTICIPLE" | "PP" => Some(MorphTag::PassiveParticiple),
            "BARE" => Some(MorphTag::Bare),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            MorphTag::Past => "PAST",
            MorphTag::PassiveParticiple => "PASSIVE_PARTICIPLE",
            MorphTag::Bare => "BARE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTemplate {
    pub frame_id: String,
    pub template: String,
    pub morph: MorphTag,
}

/// Ordered set of frame templates with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    frames: Vec<FrameTemplate>,
    index: HashMap<String, usize>,
}

impl TemplateSet {
    pub fn new(frames: Vec<FrameTemplate>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, f) in frames.iter().enumerate() {
            if f.template.matches(SLOT).count() != 1 {
                return Err(Error::Domain(format!("template for `{}` must contain exactly one {SLOT}", f.frame_id)));
            }
            if index.insert(f.frame_id.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate frame id `{}`", f.frame_id)));
            }
        }
        Ok(TemplateSet { frames, index })
    }

    /// Parses `frame_id<TAB>template<TAB>morph_tag` rows (header optional).
    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && line.starts_with("frame_id\t")) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::data(origin, i + 1, "expected frame_id, template, morph_tag"));
            }
            let morph = MorphTag::parse(fields[2])
                .ok_or_else(|| Error::data(origin, i + 1, format!("unknown morphology tag `{}`", fields[2])))?;
            frames.push(FrameTemplate {
                frame_id: fields[0].to_string(),
                template: fields[1].to_string(),
                morph,
            });
        }
        Self::new(frames)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    /// The 38 frames of the small validation study.
    pub fn pilot() -> Self {
        Self::parse_tsv(PILOT_FRAMES_TSV, Path::new("frames_pilot.tsv")).expect("bundled pilot frames")
    }

    /// The 50 frames of the lexicon-scale dataset.
    pub fn mega() -> Self {
        Self::parse_tsv(MEGA_FRAMES_TSV, Path::new("frames_mega.tsv")).expect("bundled mega frames")
    }

    pub fn get(&self, frame_id: &str) -> Result<&FrameTemplate> {
        self.index
            .get(frame_id)
            .map(|&i| &self.frames[i])
            .ok_or_else(|| Error::UnknownFrame(frame_id.to_string()))
    }

    pub fn frames(&self) -> &[FrameTemplate] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Renders `verb` in frame `frame_id`.
    pub fn instantiate(&self, verb: &VerbEntry, frame_id: &str) -> Result<SentenceItem> {
        Ok(instantiate(verb, self.get(frame_id)?))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("frame_id\ttemplate\tmorph_tag\n");
        for f in &self.frames {
            s.push_str(&format!("{}\t{}\t{}\n", f.frame_id, f.template, f.morph.as_str()));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerbEntry {
    pub lemma: String,
    pub past: String,
    pub passive_participle: String,
}

impl VerbEntry {
    pub fn new(lemma: &str, past: &str, passive_participle: &str) -> Self {
        VerbEntry {
            lemma: lemma.into(),
            past: past.into(),
            passive_participle: passive_participle.into(),
        }
    }

    /// Entry whose forms all come from the regular `-ed` rule.
    pub fn regular(lemma: &str) -> Self {
        let past = regular_past(lemma);
        VerbEntry::new(lemma, &past, &past)
    }

    fn form(&self, tag: MorphTag) -> &str {
        match tag {
            MorphTag::Past => &self.past,
            MorphTag::PassiveParticiple => &self.passive_participle,
            MorphTag::Bare => &self.lemma,
        }
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Regular English past tense of a single word: `-e` takes `-d`, consonant +
/// `y` becomes `-ied`, and a monosyllable ending consonant-vowel-consonant
/// doubles its final consonant (except w, x, y).
fn regular_past_word(w: &str) -> String {
    let chars: Vec<char> = w.chars().collect();
    let n = chars.len();
    if n == 0 {
        return String::new();
    }
    let last = chars[n - 1];
    if last == 'e' {
        return format!("{w}d");
    }
    if last == 'y' && n >= 2 && !is_vowel(chars[n - 2]) {
        return format!("{}ied", &w[..w.len() - 1]);
    }
    // `qu` acts as a consonant (quip, quiz).
    let vowel_at = |i: usize| is_vowel(chars[i]) && !(chars[i] == 'u' && i > 0 && chars[i - 1] == 'q');
    let cvc = n >= 3 && !vowel_at(n - 1) && vowel_at(n - 2) && !vowel_at(n - 3) && !matches!(last, 'w' | 'x' | 'y');
    if cvc {
        let groups = (0..n).filter(|&i| vowel_at(i) && (i == 0 || !vowel_at(i - 1))).count();
        if groups == 1 {
            return format!("{w}{last}ed");
        }
    }
    format!("{w}ed")
}

/// Regular past of a lemma; in multiword verbs only the head (first word)
/// inflects ("figure out" → "figured out").
pub fn regular_past(lemma: &str) -> String {
    match lemma.split_once(' ') {
        Some((head, rest)) => format!("{} {rest}", regular_past_word(head)),
        None => regular_past_word(lemma),
    }
}

/// Irregular forms plus, optionally, the regular rule for everything else.
#[derive(Debug, Clone)]
pub struct Lexicon {
    irregular: HashMap<String, (Option<String>, Option<String>)>,
    pub derive_regular: bool,
}

impl Lexicon {
    /// Parses `lemma<TAB>past<TAB>passive_participle` rows; the last two
    /// columns may be empty or absent.
    pub fn parse_tsv(text: &str, origin: &Path, derive_regular: bool) -> Result<Self> {
        let mut irregular = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && line.starts_with("lemma")) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields[0].is_empty() {
                return Err(Error::data(origin, i + 1, "empty lemma"));
            }
            let opt = |k: usize| fields.get(k).filter(|s| !s.is_empty()).map(|s| s.to_string());
            irregular.insert(fields[0].to_string(), (opt(1), opt(2)));
        }
        Ok(Lexicon {
            irregular,
            derive_regular,
        })
    }

    pub fn load(path: &Path, derive_regular: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path, derive_regular)
    }

    /// The bundled irregular list with the regular rule enabled.
    pub fn english() -> Self {
        Self::parse_tsv(IRREGULAR_TSV, Path::new("irregular.tsv"), true).expect("bundled lexicon")
    }

    /// Resolves all forms of `lemma`. The passive participle defaults to the
    /// past form.
    pub fn entry(&self, lemma: &str) -> Result<VerbEntry> {
        let (head, rest) = match lemma.split_once(' ') {
            Some((h, r)) => (h, Some(r)),
            None => (lemma, None),
        };
        let listed = self.irregular.get(lemma).or_else(|| self.irregular.get(head));
        let whole = self.irregular.contains_key(lemma);
        let attach = |form: String| match (rest, whole) {
            (Some(r), false) => format!("{form} {r}"),
            _ => form,
        };
        let past = match listed.and_then(|(p, _)| p.clone()) {
            Some(p) => attach(p),
            None if self.derive_regular => regular_past(lemma),
            None => {
                return Err(Error::Morphology {
                    lemma: lemma.to_string(),
                    form: "past",
                })
            }
        };
        let pp = match listed.and_then(|(_, pp)| pp.clone()) {
            Some(pp) => attach(pp),
            None => past.clone(),
        };
        Ok(VerbEntry {
            lemma: lemma.to_string(),
            past,
            passive_participle: pp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceItem {
    pub verb: String,
    pub frame_id: String,
    pub sentence: String,
}

pub fn instantiate(verb: &VerbEntry, frame: &FrameTemplate) -> SentenceItem {
    SentenceItem {
        verb: verb.lemma.clone(),
        frame_id: frame.frame_id.clone(),
        sentence: frame.template.replacen(SLOT, verb.form(frame.morph), 1),
    }
}

/// Full verb × frame product, verb-major.
pub fn generate_all(verbs: &[VerbEntry], frames: &TemplateSet) -> Result<Vec<SentenceItem>> {
    if verbs.is_empty() || frames.is_empty() {
        return Err(Error::Domain("need at least one verb and one frame".into()));
    }
    Ok(verbs
        .iter()
        .flat_map(|v| frames.frames().iter().map(move |f| instantiate(v, f)))
        .collect())
}

// ---------------------------------------------------------------------------
// List designs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Pilot,
    Mega,
    SingleVerb,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Pilot => "pilot",
            DesignKind::Mega => "mega",
            DesignKind::SingleVerb => "single-verb",
        })
    }
}

/// Lists of items; each list holds indices into `items`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListDesign {
    pub kind: DesignKind,
    pub items: Vec<SentenceItem>,
    pub lists: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct DesignJson<'a> {
    design: DesignKind,
    lists: Vec<Vec<&'a SentenceItem>>,
}

impl ListDesign {
    pub fn list_items(&self, l: usize) -> impl Iterator<Item = &SentenceItem> {
        self.lists[l].iter().map(move |&i| &self.items[i])
    }

    pub fn to_json(&self) -> String {
        let doc = DesignJson {
            design: self.kind,
            lists: (0..self.lists.len()).map(|l| self.list_items(l).collect()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable design")
    }

    /// Checks the constraints of this design's kind.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mut global: HashMap<(&str, &str), usize> = HashMap::new();
        for (l, list) in self.lists.iter().enumerate() {
            let mut verbs: HashMap<&str, usize> = HashMap::new();
            let mut frames: HashMap<&str, usize> = HashMap::new();
            for &i in list {
                let it = &self.items[i];
                *verbs.entry(&it.verb).or_default() += 1;
                *frames.entry(&it.frame_id).or_default() += 1;
                *global.entry((&it.verb, &it.frame_id)).or_default() += 1;
            }
            match self.kind {
                DesignKind::Pilot => {
                    if let Some((v, n)) = verbs.iter().find(|(_, &n)| n != 2) {
                        return Err(format!("list {l}: verb `{v}` appears {n} times, expected 2"));
                    }
                    if let Some((f, n)) = frames.iter().find(|(_, &n)| !(1..=2).contains(&n)) {
                        return Err(format!("list {l}: frame `{f}` appears {n} times, expected 1 or 2"));
                    }
                }
                DesignKind::Mega => {
                    if let Some((v, n)) = verbs.iter().find(|(_, &n)| n > 1) {
                        return Err(format!("list {l}: verb `{v}` appears {n} times"));
                    }
                    if let Some((f, n)) = frames.iter().find(|(_, &n)| n > 1) {
                        return Err(format!("list {l}: frame `{f}` appears {n} times"));
                    }
                }
                DesignKind::SingleVerb => {
                    if verbs.len() != 1 {
                        return Err(format!("list {l}: {} distinct verbs", verbs.len()));
                    }
                }
            }
        }
        // Pilot and mega designs cover the whole product exactly once.
        if self.kind != DesignKind::SingleVerb {
            let verbs: HashSet<&str> = self.items.iter().map(|i| i.verb.as_str()).collect();
            let frames: HashSet<&str> = self.items.iter().map(|i| i.frame_id.as_str()).collect();
            if global.len() != verbs.len() * frames.len() {
                return Err(format!(
                    "{} distinct pairs listed, expected {}",
                    global.len(),
                    verbs.len() * frames.len()
                ));
            }
            if let Some(((v, f), n)) = global.iter().find(|(_, &n)| n != 1) {
                return Err(format!("pair ({v}, {f}) listed {n} times"));
            }
        }
        Ok(())
    }
}

/// Verb and frame vocabularies of a complete product, plus a lookup from
/// `(verb, frame)` index to item index.
fn product_index(items: &[SentenceItem]) -> Result<(usize, usize, Vec<Vec<usize>>)> {
    let mut verbs: HashMap<&str, usize> = HashMap::new();
    let mut frames: HashMap<&str, usize> = HashMap::new();
    for it in items {
        let nv = verbs.len();
        verbs.entry(&it.verb).or_insert(nv);
        let nf = frames.len();
        frames.entry(&it.frame_id).or_insert(nf);
    }
    let (nv, nf) = (verbs.len(), frames.len());
    let mut cell = vec![vec![usize::MAX; nf]; nv];
    for (i, it) in items.iter().enumerate() {
        let slot = &mut cell[verbs[it.verb.as_str()]][frames[it.frame_id.as_str()]];
        if *slot != usize::MAX {
            return Err(Error::Domain(format!("item ({}, {}) repeated", it.verb, it.frame_id)));
        }
        *slot = i;
    }
    if items.len() != nv * nf {
        return Err(Error::Domain(format!(
            "items are not a complete product: {} items for {nv} verbs x {nf} frames",
            items.len()
        )));
    }
    Ok((nv, nf, cell))
}

const PILOT_SHUFFLE_STEPS: usize = 200_000;

/// Pilot-style design: `F/2` lists in which every verb appears exactly twice
/// (with distinct frames) and every frame once or twice, covering the whole
/// product once. A cyclic design built from random permutations is
/// randomized further by item swaps that keep every constraint satisfied.
pub fn build_pilot_lists(items: &[SentenceItem], seed: u64) -> Result<ListDesign> {
    let (nv, nf, cell) = product_index(items)?;
    if nf % 2 != 0 {
        return Err(Error::Construction(format!("{nf} frames cannot be split into lists with two slots per verb")));
    }
    let nl = nf / 2;
    // Each frame has nv items to spread over nl lists with 1..=2 per list.
    if nv < nl || nv > 2 * nl {
        return Err(Error::Construction(format!(
            "frame-count constraint infeasible: {nv} verbs over {nl} lists (need {nl} <= verbs <= {})",
            2 * nl
        )));
    }
    let mut rng = rng::named(seed, "pilot-lists");
    let assign = pilot_assignment(nv, nf, nl, &mut rng);
    let mut lists = vec![Vec::with_capacity(2 * nv); nl];
    for v in 0..nv {
        for f in 0..nf {
            lists[assign[v][f]].push(cell[v][f]);
        }
    }
    for l in &mut lists {
        l.shuffle(&mut rng);
    }
    let design = ListDesign {
        kind: DesignKind::Pilot,
        items: items.to_vec(),
        lists,
    };
    design.check().map_err(Error::Construction)?;
    Ok(design)
}

/// `assign[v][f]` = list of item (v, f).
///
/// Frames are paired at random and verb `v` puts pair `(l + v) mod L` in
/// list `l`, so every verb fills each list with two distinct frames and a
/// frame lands in a list once per verb congruent to it mod `L`, which is
/// one or two times when `L <= V <= 2L`. Random swaps of two of a verb's
/// items between lists are then kept whenever the frame counts stay in
/// range.
fn pilot_assignment(nv: usize, nf: usize, nl: usize, rng: &mut rng::StreamRng) -> Vec<Vec<usize>> {
    let mut frame_order: Vec<usize> = (0..nf).collect();
    frame_order.shuffle(rng);
    let mut verb_order: Vec<usize> = (0..nv).collect();
    verb_order.shuffle(rng);
    let mut list_order: Vec<usize> = (0..nl).collect();
    list_order.shuffle(rng);
    let mut assign = vec![vec![0; nf]; nv];
    for (pos, &v) in verb_order.iter().enumerate() {
        for l in 0..nl {
            let pair = (l + pos) % nl;
            for &f in &frame_order[2 * pair..2 * pair + 2] {
                assign[v][f] = list_order[l];
            }
        }
    }
    let mut count = vec![vec![0i32; nl]; nf];
    for row in &assign {
        for (f, &l) in row.iter().enumerate() {
            count[f][l] += 1;
        }
    }
    let ok = |c: i32| (1..=2).contains(&c);
    for _ in 0..PILOT_SHUFFLE_STEPS {
        let v = rng.random_range(0..nv);
        let (f1, f2) = (rng.random_range(0..nf), rng.random_range(0..nf));
        let (l1, l2) = (assign[v][f1], assign[v][f2]);
        if l1 == l2 || f1 == f2 {
            continue;
        }
        // (v, f1) moves to l2 and (v, f2) to l1
        if ok(count[f1][l1] - 1) && ok(count[f1][l2] + 1) && ok(count[f2][l1] + 1) && ok(count[f2][l2] - 1) {
            count[f1][l1] -= 1;
            count[f1][l2] += 1;
            count[f2][l1] += 1;
            count[f2][l2] -= 1;
            assign[v].swap(f1, f2);
        }
    }
    assign
}

/// Shifted-block design: verbs are split into blocks of `|frames|`; list
/// `(block, shift)` pairs the block's i-th verb with frame `(i + shift) mod
/// |frames|`. Each list holds every frame once and each verb at most once,
/// and the lists cover the product exactly once. The seed shuffles
/// presentation order within lists.
pub fn build_mega_lists(verbs: &[VerbEntry], frames: &TemplateSet, seed: u64) -> Result<ListDesign> {
    let nf = frames.len();
    if nf == 0 || verbs.is_empty() {
        return Err(Error::Domain("need at least one verb and one frame".into()));
    }
    if !verbs.len().is_multiple_of(nf) {
        return Err(Error::Construction(format!(
            "{} verbs is not a multiple of {nf} frames; add {} padding verbs explicitly",
            verbs.len(),
            nf - verbs.len() % nf
        )));
    }
    let items = generate_all(verbs, frames)?;
    let blocks = verbs.len() / nf;
    let mut lists = Vec::with_capacity(blocks * nf);
    for b in 0..blocks {
        for s in 0..nf {
            let mut rng = rng::stream(seed, (b * nf + s) as u64);
            let mut list: Vec<usize> = (0..nf).map(|i| (b * nf + i) * nf + (i + s) % nf).collect();
            list.shuffle(&mut rng);
            lists.push(list);
        }
    }
    Ok(ListDesign {
        kind: DesignKind::Mega,
        items,
        lists,
    })
}

/// One verb crossed with every frame in a single shuffled list.
pub fn build_single_verb_list(verb: &VerbEntry, frames: &TemplateSet, seed: u64) -> Result<ListDesign> {
    let items = generate_all(std::slice::from_ref(verb), frames)?;
    let mut list: Vec<usize> = (0..items.len()).collect();
    list.shuffle(&mut rng::stream(seed, 0));
    Ok(ListDesign {
        kind: DesignKind::SingleVerb,
        items,
        lists: vec![list],
    })
}
