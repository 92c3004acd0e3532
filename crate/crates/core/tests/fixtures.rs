//! Worked examples with hand-computed answers.

use std::collections::BTreeSet;
use std::f64::consts::LN_2;
use std::sync::Arc;

use synthparse_core::executor::{execute, load_database};
use synthparse_core::grammar::{load_grammar, Grammar};
use synthparse_core::metrics::{
    corpus_perplexity_of, denotation_accuracy, kendall_tau, logical_coverage, perplexity, perplexity_of, token_f1,
    EmptyDenotationPolicy,
};
use synthparse_core::paraphrase::{
    filter_paraphrases, generate_paraphrases, run_stage, FilterMode, FilterParser, GrammarFilter, GrammarTrainer,
    IdentityParaphraser, InitialParser, Paraphraser, PipelineConfig, RuleTableParaphraser,
};
use synthparse_core::program::{parse_program, Program};
use synthparse_core::scorer::{LogProb, Scorer, UniformScorer, UnigramStub};
use synthparse_core::selection::{score_dataset, select_top_k, SelectionConfig};
use synthparse_core::synthesis::{apply_constraints, bucket_by_depth, enumerate, ConstraintRule};
use synthparse_core::{tokenize, Dataset, DatasetName, Example, Provenance};

fn data(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn t(s: &str) -> Vec<String> {
    tokenize(s)
}

fn close(a: f64, b: f64) {
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

// ---------------------------------------------------------------------------
// metrics

#[test]
fn perplexity_identities() {
    let half = UniformScorer { token_logprob: -LN_2 };
    let corpus = [t("a b c"), t("d"), t("e f g h i")];
    close(perplexity(&corpus, &half).unwrap(), 2.0);
    // uniform over V tokens gives V
    let v = 7.0f64;
    let uniform = UniformScorer { token_logprob: -v.ln() };
    close(perplexity(&[t("x y z")], &uniform).unwrap(), v);
    // per-token NLLs ln 2 and ln 8 average to ln 4
    let mixed = [
        LogProb {
            logprob: -2.0 * LN_2,
            token_count: 2,
        },
        LogProb {
            logprob: -3.0 * 8f64.ln(),
            token_count: 3,
        },
    ];
    close(perplexity_of(&mixed).unwrap(), 4.0);
    close(corpus_perplexity_of(&mixed[..1]).unwrap(), 2.0);
}

#[test]
fn token_f1_and_tau_fixtures() {
    close(token_f1(&t("a b c"), &t("a b d")), 2.0 / 3.0);
    close(token_f1(&t("a b"), &t("a b")), 1.0);
    close(token_f1(&t("a b"), &t("c d")), 0.0);
    close(token_f1(&[], &[]), 1.0);
    close(token_f1(&t("a"), &[]), 0.0);
    close(kendall_tau(&t("a b c d"), &t("a b c d")).unwrap(), 1.0);
    close(kendall_tau(&t("a b c d"), &t("d c b a")).unwrap(), -1.0);
    close(kendall_tau(&t("a b c d"), &t("a c b d")).unwrap(), 2.0 / 3.0);
    assert_eq!(kendall_tau(&t("a b"), &t("a c")), None);
}

fn example(id: &str, text: &str, program: &str) -> Example {
    Example::new(id, t(text), parse_program(program).unwrap(), 1, Provenance::Canonical).unwrap()
}

#[test]
fn coverage_counts_examples_not_templates() {
    let p = |v: &str| format!("(call f fb:en.venue.{v})");
    let reference = Dataset::from_examples(
        DatasetName::Canonical,
        vec![
            example("1", "a", &p("acl")),
            example("2", "b", &p("naacl")),
            example("3", "c", "(call g (string x))"),
            example("4", "d", "(call h (string x))"),
        ],
    )
    .unwrap();
    let candidate = Dataset::from_examples(
        DatasetName::Paraphrased,
        vec![example("5", "e", &p("emnlp")), example("6", "f", "(call h (string x))")],
    )
    .unwrap();
    close(logical_coverage(&reference, &candidate).unwrap(), 0.75);
    close(logical_coverage(&reference, &reference).unwrap(), 1.0);
    close(
        logical_coverage(&reference, &Dataset::new(DatasetName::Other)).unwrap(),
        0.0,
    );
}

#[test]
fn different_programs_with_equal_denotations_count_as_correct() {
    let db = load_database(&data("demo.db")).unwrap();
    let papers = "(call getProperty (call singleton fb:en.paper) (string !type))";
    let pred = parse_program(&format!(
        "(call filter {papers} (string paper.venue) (string =) fb:en.venue.acl)"
    ))
    .unwrap();
    let gold = parse_program(&format!(
        "(call superlative {papers} (string min) (string paper.publication_year))"
    ))
    .unwrap();
    let broken = parse_program("(call getProperty fb:en.paper.p1 (string paper.nope))").unwrap();
    let empty = parse_program(&format!(
        "(call filter {papers} (string paper.venue) (string =) fb:en.year.2014)"
    ))
    .unwrap();

    let acc = denotation_accuracy(
        &[pred.clone(), broken.clone()],
        &[gold.clone(), gold.clone()],
        &db,
        Default::default(),
    )
    .unwrap();
    assert_eq!((acc.correct, acc.total, acc.pred_errors), (1, 2, 1));
    close(acc.accuracy, 0.5);

    // an empty gold only matches an empty prediction under the match policy
    let flag = denotation_accuracy(
        std::slice::from_ref(&empty),
        std::slice::from_ref(&empty),
        &db,
        EmptyDenotationPolicy::Flag,
    )
    .unwrap();
    assert_eq!((flag.correct, flag.empty_gold), (0, 1));
    let matched = denotation_accuracy(
        std::slice::from_ref(&empty),
        std::slice::from_ref(&empty),
        &db,
        EmptyDenotationPolicy::Match,
    )
    .unwrap();
    assert_eq!(matched.correct, 1);
    let gold_error = denotation_accuracy(
        std::slice::from_ref(&broken),
        std::slice::from_ref(&broken),
        &db,
        EmptyDenotationPolicy::Match,
    )
    .unwrap();
    assert_eq!((gold_error.correct, gold_error.gold_errors), (0, 1));
}

// ---------------------------------------------------------------------------
// scoring and selection

#[test]
fn unigram_stub_follows_add_one_formula() {
    let m = UnigramStub::fit(&[t("a a b")]).unwrap();
    close(m.prob("a"), 0.5);
    close(m.prob("b"), 1.0 / 3.0);
    close(m.unknown_prob(), 1.0 / 6.0);
    let r = m.score_batch(&[t("a b"), vec![]]).unwrap();
    close(r[0].logprob, 0.5f64.ln() + (1.0f64 / 3.0).ln());
    assert_eq!(r[0].token_count, 2);
    assert_eq!(
        r[1],
        LogProb {
            logprob: 0.0,
            token_count: 0
        }
    );
    let x = UnigramStub::fit(&[t("x")]).unwrap();
    close(x.prob("x"), 2.0 / 3.0);
    close(x.unknown_prob(), 1.0 / 3.0);
}

#[test]
fn demo_scores_match_a_recomputed_unigram_sum() {
    let corpus: Vec<Vec<String>> = data("corpus.txt")
        .lines()
        .map(tokenize)
        .filter(|u| !u.is_empty())
        .collect();
    let m = UnigramStub::fit(&corpus).unwrap();
    // independent recount
    let mut counts = std::collections::BTreeMap::<&str, f64>::new();
    let mut n = 0.0;
    for w in corpus.iter().flatten() {
        *counts.entry(w).or_default() += 1.0;
        n += 1.0;
    }
    let denom = n + counts.len() as f64 + 1.0;
    let g = load_grammar(&data("demo.grammar")).unwrap();
    let scored = score_dataset(&enumerate(&g, 6).unwrap(), &m, 16).unwrap();
    for e in &scored {
        let want: f64 = e
            .utterance
            .iter()
            .map(|w| ((counts.get(w.as_str()).copied().unwrap_or(0.0) + 1.0) / denom).ln())
            .sum();
        assert!((e.score.unwrap() - want).abs() < 1e-9, "{}", e.text());
    }
    let uniform = score_dataset(&scored, &UniformScorer { token_logprob: -LN_2 }, 3).unwrap();
    let three = uniform.iter().find(|e| e.utterance.len() == 3).unwrap();
    close(three.score.unwrap(), -3.0 * LN_2);
}

fn with_score(id: &str, venue: &str, head: &str, score: f64) -> Example {
    let mut e = example(id, id, &format!("(call {head} fb:en.venue.{venue})"));
    e.score = Some(score);
    e
}

#[test]
fn selection_fixtures_with_default_settings() {
    let cfg = SelectionConfig::default();
    assert_eq!((cfg.top_k, cfg.delta), (2000, 5.0));
    let group = Dataset::from_examples(
        DatasetName::Canonical,
        vec![
            with_score("a", "acl", "f", -1.0),
            with_score("b", "naacl", "f", -3.0),
            with_score("c", "emnlp", "f", -7.5),
        ],
    )
    .unwrap();
    let (out, _) = select_top_k(&bucket_by_depth(&group), &cfg).unwrap();
    assert_eq!(out.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);

    // exactly at the gap is kept
    let edge = Dataset::from_examples(
        DatasetName::Canonical,
        vec![with_score("a", "acl", "f", -1.0), with_score("b", "naacl", "f", -6.0)],
    )
    .unwrap();
    assert_eq!(select_top_k(&bucket_by_depth(&edge), &cfg).unwrap().0.len(), 2);

    let two = Dataset::from_examples(
        DatasetName::Canonical,
        vec![with_score("a", "acl", "g", -4.0), with_score("b", "acl", "f", -2.0)],
    )
    .unwrap();
    let (one, rep) = select_top_k(&bucket_by_depth(&two), &SelectionConfig { top_k: 1, delta: 5.0 }).unwrap();
    assert_eq!(one.examples[0].id, "b");
    assert_eq!((rep[0].groups, rep[0].groups_kept), (2, 1));
    assert_eq!(select_top_k(&bucket_by_depth(&two), &cfg).unwrap().0.len(), 2);
}

// ---------------------------------------------------------------------------
// synthesis

#[test]
fn small_grammar_enumeration_and_constraints() {
    let g = load_grammar(
        "(rule r1 lexicon (ROOT) (\"a\") (constant (string a)))\n\
         (rule r2 general (ROOT) (\"b\" $ROOT) (template (call b #0)))",
    )
    .unwrap();
    let d = enumerate(&g, 3).unwrap();
    let texts: Vec<String> = d.iter().map(Example::text).collect();
    assert_eq!(texts, ["a", "b a", "b b a"]);
    assert!(enumerate(&g, 0).is_err());

    let demo = load_grammar(&data("demo.grammar")).unwrap();
    let papers = "(call getProperty (call singleton fb:en.paper) (string !type))";
    let by =
        |inner: &str, who: &str| format!("(call filter {inner} (string paper.author) (string =) fb:en.author.{who})");
    let same = example("same", "paper by ada and ada", &by(&by(papers, "ada"), "ada"));
    let diff = example("diff", "paper by ada and bob", &by(&by(papers, "ada"), "bob"));
    let set = Dataset::from_examples(DatasetName::Canonical, vec![same, diff]).unwrap();
    let rule: ConstraintRule = "distinct-entities:paper.author:2".parse().unwrap();
    let kept = apply_constraints(&set, &[rule], &demo).unwrap();
    assert_eq!(kept.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["diff"]);
    assert_eq!(apply_constraints(&set, &[], &demo).unwrap(), set);
    assert!(apply_constraints(&set, &["distinct-entities:paper.nope:2".parse().unwrap()], &demo).is_err());

    let all = enumerate(&demo, 6).unwrap();
    assert_eq!(
        bucket_by_depth(&all).values().map(Dataset::len).sum::<usize>(),
        all.len()
    );
}

// ---------------------------------------------------------------------------
// paraphrasing and filtering

fn demo() -> Arc<Grammar> {
    Arc::new(load_grammar(&data("demo.grammar")).unwrap())
}

fn one(e: Example) -> Dataset {
    Dataset::from_examples(DatasetName::Canonical, vec![e]).unwrap()
}

#[test]
fn rule_table_rewrites_and_respects_the_beam() {
    let p = RuleTableParaphraser::parse(&data("demo.rules")).unwrap();
    let out = p.generate(&t("state with the largest area"), 10, None).unwrap();
    assert!(out.contains(&t("state with the biggest area")));
    let prefixes = vec!["how many".to_string()];
    let out = p.generate(&t("number of paper in acl"), 4, Some(&prefixes)).unwrap();
    assert!(out.len() <= 4);
    assert!(out.iter().filter(|c| c.starts_with(&t("how many"))).count() >= 2);
    assert_eq!(
        IdentityParaphraser.generate(&t("a b"), 1, None).unwrap(),
        vec![t("a b")]
    );
}

#[test]
fn filter_accepts_round_trips_and_rejects_nonsense() {
    let g = demo();
    let filter = GrammarFilter::new(g.clone(), 6);
    let seed = enumerate(&g, 6).unwrap();
    let src = seed.iter().find(|e| e.text() == "paper in acl").unwrap().clone();
    let mut echo = src.clone();
    echo.id = "echo".into();
    let mut junk = src.clone();
    junk.id = "junk".into();
    junk.utterance = t("xyzzy");
    let cands = Dataset::from_examples(DatasetName::Paraphrased, vec![echo, junk]).unwrap();
    let (acc, rej) = filter_paraphrases(&cands, &filter, &FilterMode::Template);
    assert_eq!(acc.examples[0].id, "echo");
    assert_eq!(rej.examples[0].id, "junk");
}

#[test]
fn paraphrase_that_flips_the_relation_is_rejected() {
    let mut text = data("demo.grammar");
    text.push_str(
        r#"
(category Author)
(rule authors lexicon (NP) ("authors") (constant (call getProperty (call singleton fb:en.author) (string !type))))
(rule cited_by general (CP) ("cited by" $Author) (template (lambda x (call filter (var x) (string author.cited_by) (string =) #0))))
(rule citing general (CP) ("who cite" $Author) (template (lambda x (call filter (var x) (string author.cites) (string =) #0))))
(rule lex_ada lexicon (Author) ("ada") (constant fb:en.author.ada))
"#,
    );
    let g = Arc::new(load_grammar(&text).unwrap());
    let filter = GrammarFilter::new(g.clone(), 6);
    let seed = enumerate(&g, 6).unwrap();
    let cited_by = seed
        .iter()
        .find(|e| e.text() == "authors cited by ada")
        .unwrap()
        .clone();
    let citing = seed.iter().find(|e| e.text() == "authors who cite ada").unwrap();
    assert_ne!(cited_by.template, citing.template);

    let mut flipped = cited_by.clone();
    flipped.id = "flipped".into();
    flipped.utterance = t("authors who cite ada");
    let mut kept = cited_by.clone();
    kept.id = "kept".into();
    kept.utterance = t("authors cited by ada");
    let cands = Dataset::from_examples(DatasetName::Paraphrased, vec![flipped, kept]).unwrap();
    assert_eq!(filter.predict(&t("authors who cite ada")), Some(citing.program.clone()));
    let (acc, rej) = filter_paraphrases(&cands, &filter, &FilterMode::Template);
    assert_eq!(acc.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["kept"]);
    assert_eq!(rej.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["flipped"]);
}

#[test]
fn ambiguous_paraphrase_is_accepted_when_any_reading_matches() {
    let g = demo();
    let filter = GrammarFilter::new(g.clone(), 6);
    let seed = enumerate(&g, 6).unwrap();
    // "in" reads as venue or year; each inherited template is recovered by
    // one of the two parses of "paper in 2014"
    let sources: Vec<&Example> = seed.iter().filter(|e| e.text() == "paper in 2014").collect();
    assert_eq!(sources.len(), 2);
    assert_ne!(sources[0].template, sources[1].template);
    for e in sources {
        let mut c = e.clone();
        c.id = "c".into();
        let (acc, _) = filter_paraphrases(&one(c), &filter, &FilterMode::Template);
        assert_eq!(acc.len(), 1, "{}", e.program);
    }
}

#[test]
fn identity_paraphraser_is_a_fixed_point() {
    let g = demo();
    let seed = enumerate(&g, 4).unwrap();
    let cfg = PipelineConfig {
        iterations: 3,
        ..PipelineConfig::default()
    };
    let mut trainer = GrammarTrainer {
        filter: GrammarFilter::new(g, 6),
    };
    let (out, _) = run_stage(
        &seed,
        &cfg,
        1,
        &IdentityParaphraser,
        &mut trainer,
        InitialParser::TrainOnSeed,
        &BTreeSet::new(),
    )
    .unwrap();
    assert_eq!(out.dataset.examples, seed.examples);
    assert!(out.iterations.iter().all(|r| r.accepted.is_empty()));
}

#[test]
fn one_iteration_equals_generate_then_filter() {
    let g = demo();
    let seed = enumerate(&g, 6).unwrap();
    let rules = RuleTableParaphraser::parse(&data("demo.rules")).unwrap();
    let filter = GrammarFilter::new(g.clone(), 6);
    let cfg = PipelineConfig {
        iterations: 1,
        beam: 6,
        ..PipelineConfig::default()
    };

    let cands = generate_paraphrases(&seed, &rules, 6, true, 1).unwrap();
    let keys: BTreeSet<(String, String)> = seed.iter().map(Example::key).collect();
    let mut seen = keys.clone();
    let fresh: Vec<Example> = cands.examples.into_iter().filter(|c| seen.insert(c.key())).collect();
    let fresh = Dataset {
        name: DatasetName::Paraphrased,
        examples: fresh,
    };
    let (accepted, _) = filter_paraphrases(&fresh, &filter, &FilterMode::Template);

    let mut trainer = GrammarTrainer { filter };
    let (out, _) = run_stage(
        &seed,
        &cfg,
        1,
        &rules,
        &mut trainer,
        InitialParser::TrainOnSeed,
        &BTreeSet::new(),
    )
    .unwrap();
    assert_eq!(out.dataset.len(), seed.len() + accepted.len());
    assert!(out.iterations[0].candidates <= seed.len() * 6);
    let seed_templates = seed.templates();
    assert!(out.dataset.templates().iter().all(|t| seed_templates.contains(t)));
}

#[test]
fn uninstantiated_parses_do_not_execute() {
    let db = load_database(&data("demo.db")).unwrap();
    let lambda = Program::lambda("x", Program::var("x"));
    assert!(execute(&lambda, &db).is_err());
}
