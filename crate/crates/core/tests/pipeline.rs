use dwalign::corpus::{self, ParallelCorpus};
use dwalign::dwa::{self, DwaTrainConfig};
use dwalign::eval::{self, AlignmentLinks};
use dwalign::fa_align::{self, FaConfig, FaModel};
use dwalign::synth::{self, DictionaryCorpusConfig};
use dwalign::transfer;

fn dictionary(pairs: usize, seed: u64) -> (ParallelCorpus, Vec<dwalign::GoldAlignment>) {
    let data = synth::dictionary_corpus(&DictionaryCorpusConfig {
        pairs,
        seed,
        ..Default::default()
    });
    let (corpus, stats) = ParallelCorpus::from_raw(&data.raw, 1, None).unwrap();
    assert_eq!(stats.dropped_empty + stats.dropped_long, 0);
    (corpus, data.gold)
}

#[test]
fn trained_model_projects_each_word_onto_its_translation() {
    let (corpus, _) = dictionary(1000, 3);
    let (fa, _) = fa_align::train_fa(&corpus, &FaConfig::default()).unwrap();
    let cfg = DwaTrainConfig {
        epochs: 15,
        d: 16,
        ..Default::default()
    };
    let (model, _) = dwa::train_dwa(&corpus, &fa, &cfg).unwrap();
    let table = transfer::projection_table(&model.params, &model.classes);
    for n in 0..50 {
        let Some(e) = model.src_vocab.get(&synth::src_word(n)) else {
            continue;
        };
        let f = model.tgt_vocab.get(&synth::tgt_word(n)).unwrap();
        assert_eq!(
            transfer::best_translation(e, &model.params, &model.classes),
            f,
            "word {n}"
        );
        assert_eq!(table.row(e as usize), model.params.r_tgt.row(f as usize));
    }
}

#[test]
fn threaded_training_agrees_with_sequential() {
    let (corpus, gold) = dictionary(400, 5);
    let (one, r1) = fa_align::train_fa(&corpus, &FaConfig::default()).unwrap();
    let (four, r4) = fa_align::train_fa(
        &corpus,
        &FaConfig {
            threads: 4,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in r1.logliks.iter().zip(&r4.logliks) {
        assert!((a - b).abs() <= 1e-9 * a.abs());
    }
    assert!((one.lambda - four.lambda).abs() < 1e-9);

    let base = DwaTrainConfig {
        epochs: 5,
        d: 8,
        ..Default::default()
    };
    let (seq, _) = dwa::train_dwa(&corpus, &one, &base).unwrap();
    let (par, _) = dwa::train_dwa(&corpus, &one, &DwaTrainConfig { threads: 4, ..base }).unwrap();
    let null_id = corpus.src_vocab().null_id().unwrap();
    let aer = |links: Vec<AlignmentLinks>| eval::corpus_aer(&links, &gold).unwrap();
    let seq_aer = aer(corpus.pairs().iter().map(|p| dwa::dwa_viterbi(p, &seq)).collect());
    let par_aer = aer(corpus.pairs().iter().map(|p| dwa::dwa_viterbi(p, &par)).collect());
    let fa_aer = aer(corpus
        .pairs()
        .iter()
        .map(|p| fa_align::viterbi_align(p, &one, null_id))
        .collect());
    assert!(
        seq_aer < 0.1 && par_aer < 0.1 && fa_aer < 0.1,
        "{seq_aer} {par_aer} {fa_aer}"
    );
}

#[test]
fn loglik_report_scales_with_duplication() {
    let text = "das haus ||| the house\ndas buch ||| the book\nein buch ||| a book\n";
    let raw = corpus::parse_triple_pipe(text.as_bytes(), "inline").unwrap();
    let (c, _) = ParallelCorpus::from_raw(&raw, 1, None).unwrap();
    let (model, report) = FaModel::train(&c, &FaConfig::default()).unwrap();
    let single = eval::corpus_loglik(&c, &model);
    assert!((single.total - report.logliks[5]).abs() < 1e-9);
    assert_eq!(single.tokens, 6);

    let doubled = corpus::RawCorpus {
        src: raw.src.iter().chain(&raw.src).cloned().collect(),
        tgt: raw.tgt.iter().chain(&raw.tgt).cloned().collect(),
    };
    let (c2, _) = ParallelCorpus::encode(
        &doubled.src,
        &doubled.tgt,
        model.src_vocab.clone(),
        model.tgt_vocab.clone(),
        None,
    )
    .unwrap();
    let twice = eval::corpus_loglik(&c2, &model);
    assert!((twice.total - 2.0 * single.total).abs() < 1e-9);
    assert!((twice.per_token - single.per_token).abs() < 1e-12);

    let back = FaModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn fa_translation_table_recovers_dictionary() {
    let (corpus, _) = dictionary(2000, 9);
    let (fa, _) = fa_align::train_fa(&corpus, &FaConfig::default()).unwrap();
    let (sv, tv) = (corpus.src_vocab(), corpus.tgt_vocab());
    let mut checked = 0;
    for n in 0..50 {
        let Some(e) = sv.get(&synth::src_word(n)) else { continue };
        if sv.freq(e) < 20 {
            continue;
        }
        let row = fa.ttable.row(e as usize);
        let best = (0..row.len()).fold(0, |b, f| if row[f] > row[b] { f } else { b });
        assert_eq!(tv.token(best as u32), synth::tgt_word(n));
        checked += 1;
    }
    assert!(checked >= 40, "only {checked} frequent words");
}
