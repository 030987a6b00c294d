use std::collections::{HashMap, HashSet};
use std::time::Instant;

use lexsel_core::bleach::{
    build_mega_lists, build_pilot_lists, build_single_verb_list, generate_all, FrameTemplate, MorphTag, TemplateSet,
    VerbEntry, SLOT,
};

/// Golden rows are `frame_id<TAB>sentence` with `___` standing for the verb.
/// Filling the blank with the bare lemma of a regular verb gives the
/// expected string (`___ed` becomes `walked`).
fn golden(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, s) = l.split_once('\t').unwrap();
            (id.to_string(), s.replace("___", "walk"))
        })
        .collect()
}

fn check_golden(set: &TemplateSet, text: &str) -> usize {
    let rows = golden(text);
    assert_eq!(rows.len(), set.len());
    let walk = VerbEntry::regular("walk");
    let mut matched = 0;
    for (id, want) in &rows {
        let got = set.instantiate(&walk, id).unwrap().sentence;
        assert_eq!(&got, want, "frame {id}");
        matched += 1;
    }
    matched
}

#[test]
fn mega_templates_match_golden_table() {
    let t = Instant::now();
    assert_eq!(check_golden(&TemplateSet::mega(), include_str!("golden/table_mega.tsv")), 50);
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn pilot_templates_match_golden_table() {
    check_golden(&TemplateSet::pilot(), include_str!("golden/table_pilot.tsv"));
}

#[test]
fn generated_sentences_have_no_placeholders() {
    let verbs: Vec<VerbEntry> = ["think", "amaze", "want", "spot", "worry"].iter().map(|v| VerbEntry::regular(v)).collect();
    for set in [TemplateSet::mega(), TemplateSet::pilot()] {
        for item in generate_all(&verbs, &set).unwrap() {
            assert!(!item.sentence.contains(SLOT) && !item.sentence.contains('{'), "{}", item.sentence);
        }
    }
}

fn frames(n: usize) -> TemplateSet {
    TemplateSet::new(
        (0..n)
            .map(|i| FrameTemplate {
                frame_id: format!("f{i}"),
                template: format!("Someone {SLOT} thing{i}."),
                morph: MorphTag::Past,
            })
            .collect(),
    )
    .unwrap()
}

fn verbs(n: usize) -> Vec<VerbEntry> {
    (0..n).map(|i| VerbEntry::regular(&format!("verb{i}"))).collect()
}

#[test]
fn pilot_design_at_full_size() {
    let items = generate_all(&verbs(30), &frames(46)).unwrap();
    assert_eq!(items.len(), 1380);
    let d = build_pilot_lists(&items, 3).unwrap();
    d.check().unwrap();
    assert_eq!(d.lists.len(), 23);
    for l in 0..23 {
        assert_eq!(d.lists[l].len(), 60);
        let mut by_verb: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut by_frame: HashMap<&str, usize> = HashMap::new();
        for it in d.list_items(l) {
            by_verb.entry(&it.verb).or_default().push(&it.frame_id);
            *by_frame.entry(&it.frame_id).or_default() += 1;
        }
        assert_eq!(by_verb.len(), 30);
        assert!(by_verb.values().all(|fs| fs.len() == 2 && fs[0] != fs[1]));
        assert_eq!(by_frame.len(), 46);
        assert!(by_frame.values().all(|&c| (1..=2).contains(&c)));
    }
    assert_eq!(d.to_json(), build_pilot_lists(&items, 3).unwrap().to_json());
}

#[test]
fn mega_design_at_full_size() {
    let t = Instant::now();
    let d = build_mega_lists(&verbs(1000), &TemplateSet::mega(), 7).unwrap();
    assert_eq!(d.lists.len(), 1000);
    let mut seen = HashSet::new();
    for l in 0..1000 {
        let items: Vec<_> = d.list_items(l).collect();
        assert_eq!(items.len(), 50);
        assert_eq!(items.iter().map(|i| &i.verb).collect::<HashSet<_>>().len(), 50);
        assert_eq!(items.iter().map(|i| &i.frame_id).collect::<HashSet<_>>().len(), 50);
        for i in items {
            assert!(seen.insert((i.verb.clone(), i.frame_id.clone())));
        }
    }
    assert_eq!(seen.len(), 50_000);
    d.check().unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn single_verb_list_is_the_full_row() {
    let manage = VerbEntry::regular("manage");
    let d = build_single_verb_list(&manage, &TemplateSet::mega(), 0).unwrap();
    assert_eq!(d.lists.len(), 1);
    assert_eq!(d.lists[0].len(), 50);
    let got: HashSet<_> = d.list_items(0).cloned().collect();
    let want: HashSet<_> = generate_all(std::slice::from_ref(&manage), &TemplateSet::mega()).unwrap().into_iter().collect();
    assert_eq!(got, want);
    let one = build_single_verb_list(&VerbEntry::regular("think"), &frames(1), 0).unwrap();
    assert_eq!(one.lists, vec![vec![0]]);
}

#[test]
fn designs_are_deterministic() {
    let small = verbs(10);
    let set = frames(10);
    assert_eq!(
        build_mega_lists(&small, &set, 4).unwrap().to_json(),
        build_mega_lists(&small, &set, 4).unwrap().to_json()
    );
}
