"""Canonical task heads: names, class counts, and class-name orderings.

Index 0 of every head is the first class of its listing, so the example
label vector [[1,0,0,0,0,0,0],[1,0,0],[1,0,0],[1,0,0,0,0]] reads
(surprise, male, Caucasian, 0-3). Everything that encodes, decodes or
reports labels goes through these tables.
"""

HEAD_ORDER = ("emotion", "gender", "race", "age")

HEAD_SIZES = {"emotion": 7, "gender": 3, "race": 3, "age": 5}

CLASS_NAMES = {
    "emotion": ("surprise", "fear", "disgust", "happy", "sad", "angry", "neutral"),
    "gender": ("male", "female", "unsure"),
    "race": ("Caucasian", "African-American", "Asian"),
    "age": ("0-3", "4-19", "20-39", "40-69", "70+"),
}
