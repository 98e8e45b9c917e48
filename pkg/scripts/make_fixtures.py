#!/usr/bin/env python3
"""Regenerate the shipped fixtures: mini-lexicon, HMM model, sample corpus, task set.

Deterministic: rerunning produces byte-identical files.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tcmrag.corpus import ClinicalCase, case_document, save_corpus, load_corpus  # noqa: E402
from tcmrag.dense import fnv1a64  # noqa: E402

DATA = ROOT / "data"

ORGANS = ["肝", "心", "脾", "肺", "肾", "胆", "胃", "大肠", "小肠", "膀胱", "三焦", "心包", "冲任", "脑"]
PATTERNS = ["气虚", "血虚", "阴虚", "阳虚", "气滞", "血瘀", "湿热", "痰湿", "火旺", "不足",
            "亏虚", "郁结", "失调", "虚弱", "不和", "受损", "内热", "积滞", "失养", "气逆",
            "阳亢", "阴亏", "寒凝", "热盛", "气陷", "络阻", "不固", "失摄", "失宣", "失降",
            "不升", "妄行", "上扰", "下陷", "外越", "内陷"]
RELATIONS = ["不和", "同病", "两虚", "俱损", "不交", "相火", "失济", "不调", "失和", "相克"]
BODY_PARTS = ["头", "胸", "腹", "胁", "腰", "背", "肩", "颈", "四肢", "脘腹", "少腹", "关节", "咽喉", "目"]
SENSATIONS = ["痛", "胀", "闷", "麻", "冷", "热", "酸", "重", "痒", "肿", "拘急", "不适"]
PULSES = ["弦", "滑", "细", "数", "沉", "迟", "浮", "紧", "缓", "弱", "濡", "涩", "洪", "结代", "弦滑", "细数", "沉细", "滑数"]
COATS = ["黄", "白", "腻", "薄白", "黄腻", "白腻", "少苔", "厚腻", "薄黄", "剥脱"]
TONGUES = ["红", "淡", "紫暗", "胖大", "瘦薄", "有齿痕", "尖红", "淡红", "绛", "暗红"]
TREATS = ["疏肝", "健脾", "和胃", "清热", "化痰", "利湿", "补气", "养血", "滋阴", "温阳",
          "理气", "活血", "安神", "固肾", "降逆", "化瘀", "解表", "消食"]
FORMULA_BASES = ["柴胡", "半夏", "茯苓", "白术", "当归", "黄连", "温胆", "归脾", "逍遥", "六味",
                 "补中", "参苓", "二陈", "平胃", "左金", "香砂", "杞菊", "天麻", "酸枣仁", "甘麦"]
FORMULA_SUFFIX = ["汤", "丸", "散", "饮"]
HERBS = ["柴胡", "白芍", "枳壳", "甘草", "半夏", "陈皮", "茯苓", "竹茹", "黄连", "吴茱萸",
         "白术", "党参", "黄芪", "当归", "川芎", "熟地", "山药", "泽泻", "丹皮", "山茱萸",
         "酸枣仁", "远志", "龙眼肉", "木香", "砂仁", "厚朴", "苍术", "藿香", "佩兰", "薏苡仁",
         "杜仲", "续断", "桑寄生", "牛膝", "天麻", "钩藤", "石决明", "栀子", "黄芩", "龙胆草",
         "麦冬", "沙参", "玉竹", "石斛", "知母", "黄柏", "肉桂", "附子", "干姜", "桂枝",
         "生姜", "大枣", "神曲", "麦芽", "山楂", "莱菔子", "瓜蒌", "薤白", "丹参", "郁金"]

SYMPTOMS = ["胃脘胀痛", "嗳气", "吞酸", "恶心", "呕吐", "纳呆", "口苦", "咽干", "胁肋胀痛",
            "头晕", "目眩", "心悸", "失眠", "多梦", "乏力", "气短", "自汗", "盗汗", "便溏",
            "便秘", "腹胀", "腹痛", "畏寒", "肢冷", "发热", "咳嗽", "咯痰", "痰多", "胸闷",
            "胸痛", "面色萎黄", "面色苍白", "口干", "口臭", "食欲不振", "嘈杂", "泛酸",
            "胃痛隐隐", "喜温喜按", "遇怒加重", "情志不舒", "烦躁易怒", "善太息", "健忘",
            "耳鸣", "腰膝酸软", "五心烦热", "潮热", "颧红", "小便短赤", "小便清长", "夜尿频多",
            "下肢浮肿", "带下量多", "月经不调", "痛经", "经色紫暗", "有血块", "咳痰黄稠",
            "痰白清稀", "鼻塞", "流涕", "恶风", "身重困倦", "脘闷", "呃逆", "肠鸣", "泄泻",
            "里急后重", "大便黏滞", "肛门灼热", "头重如裹", "记忆减退", "精神萎靡", "久病体虚",
            "形体消瘦", "形体肥胖", "少气懒言", "声低息微", "食后腹胀", "空腹痛甚", "得食痛减",
            "入夜尤甚", "晨起口苦", "进食生冷后加重"]

PATHO_CLAUSES = ["肝气犯胃", "胃失和降", "脾失健运", "痰热扰心", "气血两虚", "阴虚火旺",
                 "阳虚水泛", "湿热下注", "气机不畅", "血行瘀滞", "肝郁化火", "心神失养",
                 "肾精亏虚", "水湿内停", "痰浊中阻", "胃阴亏耗", "中气下陷", "寒邪客胃",
                 "食滞胃脘", "肺失宣降", "心火亢盛", "肾不纳气", "肝阳化风", "冲任失调"]

GENERAL = ["患者", "主诉", "症见", "舌质", "舌苔", "脉象", "治以", "方用", "加减", "服药",
           "复诊", "痊愈", "好转", "辨证", "证型", "病机", "中医", "医案", "诊断", "调理",
           "每日", "一剂", "水煎服", "饮食", "起居", "情志", "劳累", "受凉", "反复发作",
           "缠绵难愈", "病程", "既往", "体检", "无明显", "伴见", "时作时止", "逐渐加重", "明显缓解"]

SYNDROMES20 = ["肝胃不和", "心脾两虚", "肝气郁结", "痰热内扰", "脾胃虚弱", "肝肾阴虚",
               "脾肾阳虚", "湿热蕴脾", "寒湿困脾", "气滞血瘀", "痰湿中阻", "胃阴不足",
               "肝火上炎", "心肾不交", "肺脾气虚", "风寒束表", "肝阳上亢", "心血不足",
               "肾气不固", "大肠湿热"]


def make_lexicon() -> list[tuple[str, int]]:
    words: dict[str, int] = {}

    def freq_of(word: str, lo: int, hi: int) -> int:
        return lo + fnv1a64(word.encode("utf-8")) % (hi - lo + 1)

    def put(word: str, lo: int, hi: int) -> None:
        if word and word not in words:
            words[word] = freq_of(word, lo, hi)

    for w in SYMPTOMS + PATHO_CLAUSES + SYNDROMES20 + GENERAL:
        put(w, 200, 800)
    for o in ORGANS:
        put(o, 300, 900)
        for p in PATTERNS:
            put(o + p, 20, 120)
    for a in ORGANS:
        for b in ORGANS:
            if a != b and len(a) == 1 and len(b) == 1:
                for r in RELATIONS:
                    put(a + b + r, 5, 40)
    for part in BODY_PARTS:
        for s in SENSATIONS:
            put(part + s, 30, 150)
    for p in PULSES:
        put("脉" + p, 80, 300)
    for c in COATS:
        put("苔" + c, 80, 300)
    for t in TONGUES:
        put("舌" + t, 80, 300)
    for t in TREATS:
        put(t, 60, 200)
        for u in TREATS:
            if t != u:
                put(t + u, 5, 30)
    for base in FORMULA_BASES:
        put(base, 40, 150)
        for suf in FORMULA_SUFFIX:
            put(base + suf, 10, 60)
    for h in HERBS:
        put(h, 40, 150)
    return sorted(words.items())


def make_hmm() -> dict:
    alphabet = "风寒暑湿燥火"
    emit_probs = {
        "B": [0.30, 0.25, 0.15, 0.12, 0.10, 0.08],
        "M": [0.05, 0.10, 0.25, 0.30, 0.15, 0.15],
        "E": [0.10, 0.15, 0.20, 0.15, 0.25, 0.15],
        "S": [0.20, 0.10, 0.10, 0.20, 0.15, 0.25],
    }
    return {
        "start": {"B": math.log(0.7), "S": math.log(0.3)},
        "trans": {
            "B": {"M": math.log(0.3), "E": math.log(0.7)},
            "M": {"M": math.log(0.4), "E": math.log(0.6)},
            "E": {"B": math.log(0.55), "S": math.log(0.45)},
            "S": {"B": math.log(0.5), "S": math.log(0.5)},
        },
        "emit": {s: {ch: math.log(p) for ch, p in zip(alphabet, probs)}
                 for s, probs in emit_probs.items()},
        "unseen": -16.0,
    }


# (background, symptoms, tongue, coat, pulse, patho clause pair, syndromes, formula)
CASE_SPECS = [
    ("男，四十五岁，饮酒史十年", ["胃脘胀痛", "嗳气", "吞酸", "遇怒加重", "善太息"],
     "红", "薄黄", "弦", ("肝气犯胃", "胃失和降"), ["肝胃不和"], "柴胡"),
    ("女，三十二岁，思虑过度", ["心悸", "失眠", "多梦", "健忘", "面色萎黄", "食欲不振"],
     "淡", "薄白", "细", ("心神失养", "气血两虚"), ["心脾两虚"], "归脾"),
    ("女，二十八岁，情志不遂半年", ["胁肋胀痛", "情志不舒", "善太息", "月经不调", "痛经"],
     "淡红", "薄白", "弦", ("气机不畅", "肝郁化火"), ["肝气郁结"], "逍遥"),
    ("男，五十一岁，形体肥胖", ["失眠", "烦躁易怒", "口苦", "痰多", "胸闷", "晨起口苦"],
     "红", "黄腻", "滑数", ("痰热扰心", "胃失和降"), ["痰热内扰"], "温胆"),
    ("女，六十岁，久病体虚", ["纳呆", "食后腹胀", "便溏", "乏力", "少气懒言", "面色萎黄"],
     "淡", "白", "缓", ("脾失健运", "中气下陷"), ["脾胃虚弱"], "补中"),
    ("男，五十八岁，头晕三年", ["头晕", "目眩", "耳鸣", "腰膝酸软", "五心烦热", "盗汗"],
     "红", "少苔", "细数", ("肾精亏虚", "阴虚火旺"), ["肝肾阴虚"], "六味"),
    ("男，六十三岁，畏寒多年", ["畏寒", "肢冷", "夜尿频多", "下肢浮肿", "便溏", "精神萎靡"],
     "胖大", "白腻", "沉细", ("阳虚水泛", "脾失健运"), ["脾肾阳虚"], "附子"),
    ("女，三十九岁，嗜食肥甘", ["脘闷", "身重困倦", "口臭", "大便黏滞", "肛门灼热", "小便短赤"],
     "红", "黄腻", "滑", ("湿热下注", "脾失健运"), ["湿热蕴脾"], "平胃"),
    ("男，四十七岁，久居湿地", ["脘闷", "头重如裹", "身重困倦", "泄泻", "进食生冷后加重"],
     "淡", "白腻", "濡", ("水湿内停", "寒邪客胃"), ["寒湿困脾"], "藿香"),
    ("女，三十五岁，产后两年", ["痛经", "经色紫暗", "有血块", "少腹痛", "情志不舒"],
     "紫暗", "薄白", "涩", ("血行瘀滞", "气机不畅"), ["气滞血瘀"], "当归"),
    ("男，四十二岁，形体肥胖", ["形体肥胖", "痰多", "胸闷", "头重如裹", "食后腹胀"],
     "胖大", "厚腻", "滑", ("痰浊中阻", "脾失健运"), ["痰湿中阻"], "二陈"),
    ("女，五十五岁，胃病十余年", ["胃痛隐隐", "口干", "咽干", "嘈杂", "形体消瘦", "便秘"],
     "红", "剥脱", "细数", ("胃阴亏耗", "阴虚火旺"), ["胃阴不足"], "沙参"),
    ("男，三十八岁，急躁易怒", ["烦躁易怒", "口苦", "目眩", "耳鸣", "胁肋胀痛", "小便短赤"],
     "尖红", "黄", "弦", ("肝郁化火", "心火亢盛"), ["肝火上炎"], "龙胆草"),
    ("男，四十九岁，夜班工作", ["失眠", "心悸", "五心烦热", "腰膝酸软", "盗汗", "健忘"],
     "红", "少苔", "细数", ("心火亢盛", "肾精亏虚"), ["心肾不交"], "黄连"),
    ("女，四十四岁，反复感冒", ["咳嗽", "痰白清稀", "气短", "自汗", "乏力", "食欲不振"],
     "淡", "薄白", "弱", ("肺失宣降", "脾失健运"), ["肺脾气虚"], "参苓"),
    ("男，二十六岁，淋雨受凉", ["恶风", "发热", "鼻塞", "流涕", "咳嗽", "头痛"],
     "淡红", "薄白", "浮", ("寒邪客胃", "肺失宣降"), ["风寒束表"], "桂枝"),
    ("女，六十二岁，高血压病史", ["头晕", "头痛", "耳鸣", "烦躁易怒", "腰膝酸软", "入夜尤甚"],
     "红", "薄黄", "弦", ("肝阳化风", "肾精亏虚"), ["肝阳上亢"], "天麻"),
    ("女，三十岁，月经量多", ["心悸", "失眠", "面色苍白", "头晕", "乏力", "月经不调"],
     "淡", "薄白", "细", ("气血两虚", "心神失养"), ["心血不足"], "酸枣仁"),
    ("男，六十八岁，年老体弱", ["夜尿频多", "小便清长", "腰膝酸软", "畏寒", "记忆减退"],
     "淡", "白", "沉", ("肾不纳气", "肾精亏虚"), ["肾气不固"], "杜仲"),
    ("男，三十四岁，暴饮暴食后", ["腹痛", "泄泻", "里急后重", "肛门灼热", "小便短赤", "发热"],
     "红", "黄腻", "滑数", ("湿热下注", "食滞胃脘"), ["大肠湿热"], "黄连"),
]


def make_corpus() -> list[ClinicalCase]:
    cases = []
    for i, (bg, symptoms, tongue, coat, pulse, patho, syndromes, formula) in enumerate(CASE_SPECS):
        case_id = f"c{i + 1:02d}"
        clinical = ("症见" + "、".join(symptoms) + "。"
                    + f"舌{tongue}，苔{coat}，脉{pulse}。")
        pathogenesis = "病机为" + "、".join(patho) + "。"
        notes = f"治以{formula}加减调理，服药后明显好转。"
        cases.append(ClinicalCase(
            case_id=case_id,
            patient_background=bg + "。",
            clinical_info=clinical,
            pathogenesis=pathogenesis,
            syndromes=list(syndromes),
            doctor_notes=notes,
            source="synthetic-fixture",
        ))
    return cases


def make_tasks(cases: list[ClinicalCase]) -> list[dict]:
    tasks = []
    n = len(CASE_SPECS)
    for i, (bg, symptoms, tongue, coat, pulse, patho, syndromes, _formula) in enumerate(CASE_SPECS):
        case_id = f"c{i + 1:02d}"
        case_text = ("现有患者，" + bg + "近来" + "，".join(symptoms) + "，"
                     + f"舌{tongue}，苔{coat}，脉{pulse}，请辨证分析。")
        gold_patho = "，".join(patho)
        distract = ["，".join(CASE_SPECS[(i + k) % n][5]) for k in (3, 7, 11)]
        patho_options = sorted({gold_patho, *distract})
        gold_syn = [s + "证" for s in syndromes]
        syn_pool = [SYNDROMES20[(i + k) % len(SYNDROMES20)] + "证" for k in (5, 9, 14)]
        syn_options = sorted({*gold_syn, *syn_pool})
        tasks.append({
            "item_id": case_id,
            "case_text": case_text,
            "pathogenesis_options": patho_options,
            "syndrome_options": syn_options,
            "gold_pathogenesis": [gold_patho],
            "gold_syndromes": gold_syn,
        })
    return tasks


def check_invariants(cases: list[ClinicalCase], tasks: list[dict]) -> None:
    docs = [case_document(c) for c in cases]
    for task in tasks:
        options = task["pathogenesis_options"] + task["syndrome_options"]
        for opt in options:
            assert opt not in task["case_text"], (task["item_id"], opt)
            for doc in docs:
                assert opt not in doc, (task["item_id"], opt)
        for a in options:
            for b in options:
                if a != b:
                    assert a not in b, (task["item_id"], a, b)


def main() -> None:
    DATA.mkdir(exist_ok=True)

    entries = make_lexicon()
    assert 1500 <= len(entries) <= 2600, len(entries)
    with open(DATA / "lexicon.txt", "w", encoding="utf-8") as fh:
        fh.write("# synthetic TCM mini-lexicon: <word> <frequency>\n")
        for word, freq in entries:
            fh.write(f"{word} {freq}\n")

    with open(DATA / "hmm_model.json", "w", encoding="utf-8") as fh:
        json.dump(make_hmm(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    cases = make_corpus()
    save_corpus(cases, DATA / "sample_corpus.jsonl")
    assert len(load_corpus(DATA / "sample_corpus.jsonl")) == 20

    tasks = make_tasks(cases)
    check_invariants(cases, tasks)
    with open(DATA / "tasks.jsonl", "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task, ensure_ascii=False) + "\n")

    print(f"lexicon: {len(entries)} entries; corpus: {len(cases)} cases; "
          f"tasks: {len(tasks)} items")


if __name__ == "__main__":
    main()
