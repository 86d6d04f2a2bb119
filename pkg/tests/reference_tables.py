"""Reference comparison tables: per-construct accuracies and printed totals."""

CONSTRUCTS = ("agreeableness", "conscientiousness", "extraversion", "neuroticism", "openness")

# method: (per-construct percentages, printed total)
BFQ = {
    "humans": ((100, 90, 50, 80, 100), 84),
    "MPNet-ML": ((50, 70, 60, 90, 50), 64),
    "MPNet": ((80, 50, 60, 100, 60), 70),
    "SurveyBot": ((60, 30, 80, 100, 50), 64),
    "Personality": ((60, 80, 60, 100, 60), 72),
    "Cross Encoder": ((80, 70, 70, 100, 80), 80),
}

BFI = {
    "humans": ((62.5, 100, 62.5, 50, 87.5), 72),
    "MPNet-ML": ((75, 75, 62.5, 50, 100), 77.5),
    "MPNet": ((87.5, 75, 87.5, 50, 100), 80),
    "SurveyBot": ((87.5, 62.5, 87.5, 62.5, 100), 75),
    "Personality": ((100, 87.5, 100, 100, 100), 97.5),
    "Cross Encoder": ((75, 75, 62.5, 100, 100), 82.5),
}
