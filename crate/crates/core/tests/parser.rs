use faultforge::fixtures::{ABP_MODEL, TCP_MODEL};
use faultforge::ltl::parse_formula;
use faultforge::modelfmt::parse_model;
use proptest::prelude::*;

proptest! {
    #[test]
    fn model_parser_never_panics(s in "\\PC{0,200}") {
        let _ = parse_model(&s);
    }

    #[test]
    fn model_parser_survives_token_soup(toks in prop::collection::vec(prop::sample::select(vec![
        "process", "channel", "property", "states", "init", "{", "}", ",", "-->", "--", "!", "?", "c", "P", "a", "b",
        ":=", "capacity", "messages", "2", "G", "F", "&&", "->", "timeout", "do", "==", "\n",
    ]), 0..60)) {
        let _ = parse_model(&toks.join(" "));
    }

    #[test]
    fn formula_parser_never_panics(s in "[pqrGFXU!&|()\\- <>]{0,40}") {
        let _ = parse_formula(&s);
    }

    #[test]
    fn truncated_fixtures_never_panic(cut in 0usize..4000) {
        for text in [TCP_MODEL, ABP_MODEL] {
            let end = text.char_indices().map(|(i, _)| i).take_while(|&i| i <= cut).last().unwrap_or(0);
            let _ = parse_model(&text[..end]);
        }
    }
}
