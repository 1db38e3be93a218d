"""Published reference values and the default replication layout.

The published coefficients come from confidential microdata; they are kept
here as formatting and arithmetic targets only.
"""

ORIGINAL_FACTORS = (
    "sp_decision",
    "ria",
    "air_travel",
    "asylum_reason_political",
    "religion_stated",
    "ethnicity_stated",
    "unaccompanied_minor",
    "interviewed",
    "ever_married",
    "english_speaking",
    "free_country_of_origin",
    "gdp_ratio",
    "at_risk",
    "refused_leave_to_land",
    "returned_to_origin",
    "length_3years",
)

# the 14 combination rows of the published coefficient table; the text says 13
INTERACTED_FACTORS = (
    "sp_decision",
    "ria",
    "air_travel",
    "asylum_reason_political",
    "religion_stated",
    "ethnicity_stated",
    "unaccompanied_minor",
    "interviewed",
    "ever_married",
    "english_speaking",
    "free_country_of_origin",
    "gdp_ratio",
    "at_risk",
    "length_3years",
)

PUBLISHED_SELECTED = (
    "year",
    "sp_decision",
    "ria",
    "unaccompanied_minor",
    "interviewed",
    "ever_married",
    "gdp_ratio",
)

PUBLISHED_COUNTS = {
    "records": 40437,
    "matched_sets": 24156,
    "after_unaccompanied_minor_constraint": 23246,
    "nationalities_matched": 96,
    "nationalities_total": 159,
}

# (term, model) -> (estimate, std_error, odds_ratio); None where the table has "-".
# The shared "Refused Leave to Land / Returned to Country of Origin" row is
# filed under refused_leave_to_land; which factor it belongs to is unknown.
PUBLISHED_TABLE3 = {
    ("sp_decision", 1): (30.1, 332.2, None),
    ("ria", 1): (1.19, 0.09, 3.28),
    ("air_travel", 1): (0.04, 0.03, 1.04),
    ("asylum_reason_political", 1): (-0.04, 0.03, 0.96),
    ("religion_stated", 1): (0.33, 0.05, 1.40),
    ("ethnicity_stated", 1): (-0.21, 0.03, 0.81),
    ("unaccompanied_minor", 1): (-30.5, 497.3, None),
    ("interviewed", 1): (1.43, 0.10, 4.16),
    ("ever_married", 1): (1.08, 0.08, 2.95),
    ("english_speaking", 1): (-0.27, 0.05, 0.76),
    ("free_country_of_origin", 1): (-0.02, 0.12, 0.98),
    ("gdp_ratio", 1): (-1.34, 0.09, 0.26),
    ("at_risk", 1): (-0.31, 0.09, 0.74),
    ("refused_leave_to_land", 1): (-0.57, 0.13, 0.57),
    ("length_3years", 1): (0.41, 0.08, 1.50),
    ("sp_decision_x_after2004", 1): (-14.5, 224.8, None),
    ("ria_x_after2004", 1): (-1.52, 0.12, 0.22),
    ("air_travel_x_after2004", 1): (0.01, 0.05, 1.01),
    ("asylum_reason_political_x_after2004", 1): (0.12, 0.05, 1.12),
    ("religion_stated_x_after2004", 1): (0.15, 0.12, 1.16),
    ("ethnicity_stated_x_after2004", 1): (0.33, 0.09, 1.40),
    ("unaccompanied_minor_x_after2004", 1): (13.8, 450.8, None),
    ("interviewed_x_after2004", 1): (-2.60, 0.13, 0.07),
    ("ever_married_x_after2004", 1): (-1.42, 0.10, 0.24),
    ("english_speaking_x_after2004", 1): (0.25, 0.08, 1.28),
    ("free_country_of_origin_x_after2004", 1): (-0.61, 0.19, 0.54),
    ("gdp_ratio_x_after2004", 1): (1.09, 0.26, 2.96),
    ("at_risk_x_after2004", 1): (0.05, 0.14, 1.05),
    ("length_3years_x_after2004", 1): (-0.96, 0.10, 0.38),
    ("sp_decision", 2): (None, None, None),
    ("ria", 2): (-0.20, 0.04, 0.82),
    ("air_travel", 2): (-0.22, 0.03, 0.80),
    ("asylum_reason_political", 2): (-0.30, 0.03, 0.74),
    ("religion_stated", 2): (0.01, 0.05, 1.01),
    ("ethnicity_stated", 2): (-0.60, 0.04, 0.55),
    ("unaccompanied_minor", 2): (-0.25, 0.10, 0.78),
    ("interviewed", 2): (-0.25, 0.03, 0.78),
    ("ever_married", 2): (-0.11, 0.03, 0.89),
    ("english_speaking", 2): (-0.32, 0.04, 0.72),
    ("free_country_of_origin", 2): (-0.30, 0.03, 0.74),
    ("gdp_ratio", 2): (None, None, None),
    ("at_risk", 2): (None, None, None),
    ("refused_leave_to_land", 2): (-0.17, 0.06, 0.84),
    ("length_3years", 2): (0.49, 0.10, 1.64),
    ("sp_decision_x_after2004", 2): (-0.24, 0.11, 0.79),
    ("ria_x_after2004", 2): (-0.39, 0.05, 0.68),
    ("air_travel_x_after2004", 2): (0.27, 0.05, 1.30),
    ("asylum_reason_political_x_after2004", 2): (0.31, 0.06, 1.36),
    ("religion_stated_x_after2004", 2): (0.42, 0.14, 1.53),
    ("ethnicity_stated_x_after2004", 2): (0.39, 0.10, 1.47),
    ("unaccompanied_minor_x_after2004", 2): (-0.49, 0.14, 0.61),
    ("interviewed_x_after2004", 2): (-0.22, 0.05, 0.80),
    ("ever_married_x_after2004", 2): (0.08, 0.05, 1.08),
    ("english_speaking_x_after2004", 2): (0.25, 0.07, 1.29),
    ("free_country_of_origin_x_after2004", 2): (0.13, 0.05, 1.14),
    ("gdp_ratio_x_after2004", 2): (None, None, None),
    ("at_risk_x_after2004", 2): (None, None, None),
    ("length_3years_x_after2004", 2): (-1.13, 0.13, 0.32),
}

# significant combination factors split by who they describe
APPLICANT_FACTORS = (
    "asylum_reason_political_x_after2004",
    "ethnicity_stated_x_after2004",
    "english_speaking_x_after2004",
)
PROCEDURAL_FACTORS = (
    "interviewed_x_after2004",
    "free_country_of_origin_x_after2004",
)
PUBLISHED_GROUP_ODDS = {"applicant": 1.32, "procedural": 0.92, "ratio": 1.44}
