use captionlab_web::{attend_json, pooling_json, score_caption_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn exact_caption_scores_one() {
    let v = parse(&score_caption_json("a red square at top", "a red square at top\ntop a red square").unwrap());
    assert_eq!(v["bleu"][3].as_f64(), Some(1.0));
    assert_eq!(v["f1"].as_f64(), Some(1.0));
    assert!(score_caption_json("a red square", "\n").is_err());
}

#[test]
fn mirrored_scene_pools_to_the_same_vector() {
    for seed in 0..20 {
        let v = parse(&pooling_json(seed).unwrap());
        assert!(v["pooled_max_diff"].as_f64().unwrap() < 1e-6);
        let moved = v["original"]["objects"] != v["mirrored"]["objects"];
        if moved {
            assert!(v["grid_max_diff"].as_f64().unwrap() > 0.1);
        }
    }
}

#[test]
fn object_query_peaks_on_its_cell() {
    let v = parse(&pooling_json(3).unwrap());
    let obj = &v["original"]["objects"][0];
    let query = format!("{} {}", obj["color"].as_str().unwrap(), obj["class"].as_str().unwrap());
    let a = parse(&attend_json(3, &query, 0.1).unwrap());
    let w: Vec<f64> = a["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let argmax = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap();
    let cell = obj["row"].as_u64().unwrap() as usize * 6 + obj["col"].as_u64().unwrap() as usize;
    assert_eq!(argmax, cell);
}
