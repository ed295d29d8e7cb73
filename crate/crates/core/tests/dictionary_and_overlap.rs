use synthmention::augment::{compose, overlap_report, Strategy};
use synthmention::corpus::{cui_set, read_concept_table};
use synthmention::fixtures::{dictionary_tsv, semeval_overlap_fixture, UMLS_DISORDERS};

#[test]
fn disorder_dictionary_coverage_counts() {
    let tsv = dictionary_tsv(&UMLS_DISORDERS);
    let table = read_concept_table(tsv.as_bytes(), "umls-shape", Some("DISO")).unwrap();
    let s = table.stats();
    assert_eq!(s.concepts, 319_381);
    assert_eq!((s.with_synonyms, s.without_synonyms, s.total_synonyms), (217_252, 102_129, 909_967));
    assert_eq!((s.with_definitions, s.without_definitions, s.total_definitions), (53_432, 265_949, 69_417));
    assert_eq!(s.with_neither, 93_448);
    // Synonyms per concept averaged over all concepts.
    let avg_syn = s.total_synonyms as f64 / s.concepts as f64;
    assert!((avg_syn - 2.84916).abs() < 5e-6, "{avg_syn}");
    // The published definitions average (0.21725) does not follow from its
    // own counts; the counts are what the fixture reproduces.
    let avg_def = s.total_definitions as f64 / s.concepts as f64;
    assert!((avg_def - 0.21735).abs() < 5e-6, "{avg_def}");
}

#[test]
fn semeval_overlap_cells() {
    let (synth, train, test) = semeval_overlap_fixture();
    let r = overlap_report(&synth, &train, &test);
    assert_eq!((r.train_cuis, r.train_mentions), (1689, 16_220));
    assert_eq!((r.test_cuis, r.test_mentions), (383, 1_523));

    let naive = r.stats(Strategy::Naive);
    assert_eq!((naive.synth_cuis_in_train, naive.synth_cuis_in_test), (920, 250));
    assert_eq!(naive.selected_mentions, 128_914);

    let ideal = r.stats(Strategy::Ideal);
    assert_eq!((ideal.synth_cuis_in_train, ideal.synth_cuis_in_test), (212, 250));
    assert_eq!(ideal.selected_mentions, 749);

    let supp = r.stats(Strategy::Supplemental);
    assert_eq!((supp.synth_cuis_in_train, supp.synth_cuis_in_test), (0, 38));
    assert_eq!(supp.selected_mentions, 126_243);

    let abl = r.stats(Strategy::Ablation);
    assert_eq!((abl.synth_cuis_in_train, abl.synth_cuis_in_test), (708, 0));
    assert_eq!(abl.selected_mentions, 128_165);

    for s in Strategy::ALL {
        let st = r.stats(s);
        assert_eq!(st.gold_mentions, 16_220);
        assert_eq!(st.combined_mentions, st.gold_mentions + st.selected_mentions);
    }
}

#[test]
fn overlap_report_tsv_has_every_strategy_column() {
    let (synth, train, test) = semeval_overlap_fixture();
    let mut buf = Vec::new();
    overlap_report(&synth, &train, &test).write_tsv("semeval", &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    let header = &lines[0];
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("{name}"));
    let train_row = lines.iter().find(|l| l[1] == "train").unwrap();
    let test_row = lines.iter().find(|l| l[1] == "test").unwrap();
    assert_eq!(train_row[col("original_cui")], "1689");
    assert_eq!(train_row[col("naive_cui")], "920");
    assert_eq!(train_row[col("naive_selected_mentions")], "128914");
    assert_eq!(test_row[col("naive_cui")], "250");
    assert_eq!(test_row[col("supplemental_cui")], "38");
}

#[test]
fn ideal_and_ablation_partition_naive() {
    let (synth, train, test) = semeval_overlap_fixture();
    let ideal = compose(Strategy::Ideal, &synth, &train, &test);
    let abl = compose(Strategy::Ablation, &synth, &train, &test);
    assert_eq!(
        ideal.synthetic_selected.mentions.len() + abl.synthetic_selected.mentions.len(),
        synth.mentions.len()
    );
    let test_cuis = cui_set(&test);
    assert!(cui_set(&ideal.synthetic_selected).is_subset(&test_cuis));
    assert!(cui_set(&abl.synthetic_selected).is_disjoint(&test_cuis));
}
