//! Themed word pools for the synthetic generator. Every word here is
//! in the standard vocabulary, so generated text never falls back to
//! character pieces.

pub const FORM_TITLES: &[&str] = &[
    "APPLICATION FORM",
    "PURCHASE ORDER",
    "INCIDENT REPORT",
    "EXPENSE CLAIM",
    "PROJECT SUMMARY",
    "CUSTOMER REGISTRATION",
    "SHIPPING NOTICE",
    "PAYMENT REQUEST",
    "EMPLOYEE RECORD",
    "SERVICE AGREEMENT",
    "INSPECTION SHEET",
    "RESEARCH PROPOSAL",
    "TRAVEL REQUEST",
    "QUALITY CHECKLIST",
    "VENDOR PROFILE",
    "MEDICAL HISTORY",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Name,
    Date,
    Code,
    Amount,
    Address,
    City,
    Phone,
    Company,
    Choice,
    Count,
}

pub const FORM_KEYS: &[(&str, ValueKind)] = &[
    ("Name", ValueKind::Name),
    ("Full Name", ValueKind::Name),
    ("Contact Person", ValueKind::Name),
    ("Approved By", ValueKind::Name),
    ("Prepared By", ValueKind::Name),
    ("Signature", ValueKind::Name),
    ("Date", ValueKind::Date),
    ("Date of Birth", ValueKind::Date),
    ("Start Date", ValueKind::Date),
    ("Due Date", ValueKind::Date),
    ("Issue Date", ValueKind::Date),
    ("Project #", ValueKind::Code),
    ("Project Number", ValueKind::Code),
    ("Order No", ValueKind::Code),
    ("Account ID", ValueKind::Code),
    ("Reference", ValueKind::Code),
    ("Invoice No", ValueKind::Code),
    ("Case ID", ValueKind::Code),
    ("Amount", ValueKind::Amount),
    ("Total Cost", ValueKind::Amount),
    ("Budget", ValueKind::Amount),
    ("Balance Due", ValueKind::Amount),
    ("Unit Price", ValueKind::Amount),
    ("Address", ValueKind::Address),
    ("Street Address", ValueKind::Address),
    ("Mailing Address", ValueKind::Address),
    ("City", ValueKind::City),
    ("Location", ValueKind::City),
    ("Branch", ValueKind::City),
    ("Phone", ValueKind::Phone),
    ("Fax", ValueKind::Phone),
    ("Telephone", ValueKind::Phone),
    ("Company", ValueKind::Company),
    ("Employer", ValueKind::Company),
    ("Supplier", ValueKind::Company),
    ("Department", ValueKind::Company),
    ("Approved", ValueKind::Choice),
    ("Urgent", ValueKind::Choice),
    ("Status", ValueKind::Choice),
    ("Quantity", ValueKind::Count),
    ("Units", ValueKind::Count),
    ("Pages", ValueKind::Count),
];

pub const FIRST_NAMES: &[&str] = &[
    "John", "Mary", "Robert", "Linda", "James", "Susan", "David", "Karen", "Peter", "Nancy", "Thomas", "Laura",
    "Daniel", "Helen", "Mark", "Sarah", "Paul", "Alice", "Steven", "Grace", "Kevin", "Emma", "Brian", "Julia",
];

pub const LAST_NAMES: &[&str] = &[
    "Smith", "Johnson", "Brown", "Miller", "Davis", "Wilson", "Moore", "Taylor", "Anderson", "Thomas", "Jackson",
    "White", "Harris", "Martin", "Thompson", "Garcia", "Clark", "Lewis", "Walker", "Young", "Allen", "King",
];

pub const MONTHS: &[&str] = &["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

pub const CODES: &[&str] = &[
    "72-31", "A-104", "B-220", "C-318", "D-042", "K-771", "M-509", "P-886", "R-125", "S-630", "T-947", "X-213",
    "10-44", "21-07", "33-90", "48-16", "56-28", "64-53", "81-62", "95-79", "AB-12", "CD-34", "EF-56", "GH-78",
];

pub const AMOUNTS: &[&str] = &[
    "12.50", "18.00", "25.75", "40.00", "64.20", "99.99", "120.00", "150.50", "210.00", "275.30", "312.45",
    "450.00", "500.00", "625.80", "780.00", "999.00", "1,200.00", "1,450.75", "2,000.00", "3,125.40",
];

pub const STREET_NAMES: &[&str] = &[
    "Main", "Oak", "Pine", "Maple", "Cedar", "Elm", "Lake", "Hill", "Park", "River", "Sunset", "Bridge",
];

pub const STREET_KINDS: &[&str] = &["Street", "Avenue", "Road", "Lane", "Drive", "Court"];

pub const CITIES: &[&str] = &[
    "Boston", "Denver", "Austin", "Seattle", "Chicago", "Atlanta", "Portland", "Phoenix", "Dallas", "Miami",
    "Detroit", "Houston", "Raleigh", "Tampa", "Omaha", "Fresno",
];

pub const PHONES: &[&str] = &[
    "555-0142", "555-0198", "555-0110", "555-0173", "555-0126", "555-0155", "555-0181", "555-0137", "555-0164",
    "555-0119",
];

pub const COMPANY_WORDS: &[&str] = &[
    "Acme", "Global", "United", "Pacific", "Summit", "Apex", "Northern", "Bright", "Atlas", "Vertex",
];

pub const COMPANY_SUFFIX: &[&str] = &["Inc", "Corp", "Ltd", "Group", "Labs", "Partners"];

pub const CHOICES: &[&str] = &["Yes", "No", "N/A", "Pending", "Closed", "Open"];

pub const FOOTER_PHRASES: &[&str] = &[
    "Page 1 of 2",
    "Page 2 of 2",
    "Form 1040-B",
    "Rev 2019",
    "For office use only",
    "Confidential",
    "Please print clearly",
    "See reverse side",
    "Internal copy",
];

pub const MENU_ITEMS: &[&str] = &[
    "Chicken Burger",
    "Beef Burger",
    "Fish Taco",
    "Caesar Salad",
    "Green Tea",
    "Iced Coffee",
    "Hot Chocolate",
    "French Fries",
    "Onion Rings",
    "Garlic Bread",
    "Tomato Soup",
    "Pork Ramen",
    "Fried Rice",
    "Spring Roll",
    "Lemon Soda",
    "Orange Juice",
    "Cheese Pizza",
    "Veggie Wrap",
    "Club Sandwich",
    "Apple Pie",
    "Milk Shake",
    "Pancake Stack",
    "Grilled Salmon",
    "Mushroom Pasta",
];

pub const MENU_COUNTS: &[&str] = &["1", "2", "3", "4", "5", "6", "x1", "x2", "x3", "x4"];

pub const STORE_NAMES: &[&str] = &[
    "CORNER CAFE",
    "SUNNY DINER",
    "HARBOR GRILL",
    "GOLDEN WOK",
    "CITY BAKERY",
    "GREEN BOWL",
    "NOODLE HOUSE",
    "BURGER BARN",
];

pub const RECEIPT_FOOTER: &[&str] = &[
    "THANK YOU",
    "PLEASE COME AGAIN",
    "CASH",
    "CARD",
    "CHANGE",
    "TAX INCLUDED",
    "TOTAL",
    "SUBTOTAL",
];

pub const TABLE_COLUMNS: &[&str] = &[
    "Model",
    "Method",
    "Dataset",
    "Score",
    "Accuracy",
    "Precision",
    "Recall",
    "Params",
    "Time",
    "Year",
    "Size",
    "Error",
    "Rank",
    "Speed",
];

pub const TABLE_CAPTION: &str = "Table";

pub const TABLE_WORDS: &[&str] = &[
    "Base", "Large", "Small", "Ours", "Baseline", "Full", "Tiny", "Deep", "Wide", "Fast", "Mixed", "Sparse",
];

pub const TABLE_NUMBERS: &[&str] = &[
    "0.1", "0.5", "1.2", "2.4", "3.7", "5.0", "7.9", "10.3", "12.8", "15.6", "21.4", "33.3", "48.2", "55.1",
    "61.7", "70.0", "76.5", "81.9", "88.4", "90.2", "92.6", "95.3", "98.1", "99.7",
];

/// Every word appearing in any pool.
pub fn all_words() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push_phrases = |phrases: &[&str]| {
        for p in phrases {
            out.extend(p.split_whitespace().map(str::to_string));
        }
    };
    push_phrases(FORM_TITLES);
    push_phrases(&FORM_KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>());
    for pool in [
        FIRST_NAMES,
        LAST_NAMES,
        MONTHS,
        CODES,
        AMOUNTS,
        STREET_NAMES,
        STREET_KINDS,
        CITIES,
        PHONES,
        COMPANY_WORDS,
        COMPANY_SUFFIX,
        CHOICES,
        FOOTER_PHRASES,
        MENU_ITEMS,
        MENU_COUNTS,
        STORE_NAMES,
        RECEIPT_FOOTER,
        TABLE_COLUMNS,
        TABLE_WORDS,
        TABLE_NUMBERS,
    ] {
        push_phrases(pool);
    }
    out.push(TABLE_CAPTION.to_string());
    out.extend((1..=31).map(|d| d.to_string()));
    out.extend((1990..=2025).map(|y| y.to_string()));
    out.extend((1..=400).step_by(7).map(|n| n.to_string()));
    out
}
