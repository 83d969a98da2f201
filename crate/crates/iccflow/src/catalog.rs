//! Tag and method catalogs.
//!
//! The tag catalog maps symbolic tag names to 32-bit identifiers; the method
//! catalog declares which methods act as taint sources (and which permission
//! and tag they imply) and which act as sinks (and which permission they
//! need, plus whether calling them can move data off the device).
//!
//! Defaults are embedded; both catalogs can also be loaded from a TOML file,
//! see [`Catalogs::from_toml_str`] for the schema.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::model::{ModelError, TagId};

/// Reserved process id for the synthetic system app that hosts the intent
/// resolver.
pub const SYSTEM_PID: u32 = 1000;
/// Package name of the synthetic system app.
pub const SYSTEM_PACKAGE: &str = "android";
/// Component name of the synthetic chooser activity inserted when an
/// implicit activity intent has several candidates.
pub const RESOLVER_ACTIVITY: &str = "ResolverActivity";

/// Fixed tag constants with well-known identifiers. All other default tags
/// get generated, non-colliding identifiers.
const PINNED_TAGS: &[(&str, u32)] = &[
    ("TAINT_LOCATION_Latitude", 0x0001_0004),
    ("TAINT_LOCATION_Longitude", 0x0001_0008),
    ("TAINT_network_state", 0x0001_0012),
    ("TAINT_sharepreference", 0x0001_0018),
];

/// Generated default tag names; identifiers are assigned sequentially from
/// `0x00020001` so they never collide with the pinned constants above.
const GENERATED_TAGS: &[&str] = &[
    // location details beyond the pinned latitude/longitude pair
    "TAINT_LOCATION",
    "TAINT_LOCATION_Altitude",
    "TAINT_LOCATION_Bearing",
    "TAINT_LOCATION_Speed",
    "TAINT_LOCATION_Accuracy",
    // contacts
    "TAINT_CONTACTS",
    "TAINT_CONTACT_NAME",
    "TAINT_CONTACT_EMAIL",
    "TAINT_CONTACT_PHONE",
    // phone state
    "TAINT_PHONE_STATE",
    "TAINT_DEVICE_ID",
    "TAINT_IMEI",
    "TAINT_IMSI",
    "TAINT_SIM_SERIAL",
    "TAINT_SIM_OPERATOR",
    "TAINT_PHONE_NUMBER",
    "TAINT_ICCID",
    "TAINT_SUBSCRIBER_INFO",
    "TAINT_VOICEMAIL",
    // sms / mms
    "TAINT_SMS_CONTENT",
    "TAINT_SMS_SENDER",
    "TAINT_SMS_INBOX",
    "TAINT_MMS_CONTENT",
    // user input
    "TAINT_USER_INPUT",
    "TAINT_PASSWORD_FIELD",
    "TAINT_CLIPBOARD",
    "TAINT_KEYSTROKE_LOG",
    // sensors
    "TAINT_ACCELEROMETER",
    "TAINT_GYROSCOPE",
    "TAINT_MAGNETOMETER",
    "TAINT_BAROMETER",
    "TAINT_LIGHT_SENSOR",
    "TAINT_PROXIMITY_SENSOR",
    "TAINT_STEP_COUNTER",
    "TAINT_HEART_RATE",
    "TAINT_AMBIENT_TEMPERATURE",
    "TAINT_HUMIDITY_SENSOR",
    "TAINT_GRAVITY_SENSOR",
    "TAINT_ROTATION_VECTOR",
    "TAINT_BODY_SENSORS",
    "TAINT_ACTIVITY_RECOGNITION",
    // camera / microphone
    "TAINT_CAMERA_IMAGE",
    "TAINT_CAMERA_METADATA",
    "TAINT_MICROPHONE_AUDIO",
    "TAINT_SCREEN_CAPTURE",
    // accounts
    "TAINT_ACCOUNT_NAME",
    "TAINT_ACCOUNT_EMAIL",
    "TAINT_AUTH_TOKEN",
    // calendar
    "TAINT_CALENDAR_EVENT",
    "TAINT_CALENDAR_ATTENDEE",
    // call log
    "TAINT_CALL_LOG",
    "TAINT_CALL_DURATION",
    // browser
    "TAINT_BROWSER_HISTORY",
    "TAINT_BROWSER_BOOKMARKS",
    "TAINT_SEARCH_QUERY",
    // network identifiers
    "TAINT_WIFI_SSID",
    "TAINT_WIFI_BSSID",
    "TAINT_MAC_ADDRESS",
    "TAINT_IP_ADDRESS",
    "TAINT_CELL_ID",
    "TAINT_BLUETOOTH_ADDRESS",
    "TAINT_NFC_TAG",
    // device identity
    "TAINT_ANDROID_ID",
    "TAINT_SERIAL_NUMBER",
    "TAINT_BUILD_FINGERPRINT",
    "TAINT_ADVERTISING_ID",
    // files and media
    "TAINT_EXTERNAL_FILE",
    "TAINT_MEDIA_STORE",
    "TAINT_DOWNLOAD_HISTORY",
    "TAINT_DOCUMENT_URI",
    // app usage
    "TAINT_INSTALLED_PACKAGES",
    "TAINT_RUNNING_TASKS",
    "TAINT_USAGE_STATS",
    "TAINT_NOTIFICATION_CONTENT",
    // other content providers
    "TAINT_CONTENT_PROVIDER",
    "TAINT_DATABASE_ROW",
    "TAINT_APPLICATION_OBJECT",
];

/// Name-to-identifier registry of taint tags.
#[derive(Debug, Clone, Default)]
pub struct TagCatalog {
    by_name: BTreeMap<String, TagId>,
    by_tag: BTreeMap<TagId, String>,
}

impl TagCatalog {
    pub fn register(&mut self, name: &str, tag: TagId) -> Result<(), ModelError> {
        if self.by_name.contains_key(name) {
            return Err(ModelError::CatalogConfig(format!("duplicate tag name '{name}'")));
        }
        if let Some(existing) = self.by_tag.get(&tag) {
            return Err(ModelError::CatalogConfig(format!(
                "tag value {tag} already registered as '{existing}'"
            )));
        }
        self.by_name.insert(name.to_string(), tag);
        self.by_tag.insert(tag, name.to_string());
        Ok(())
    }

    /// Resolve a registered tag name to its 32-bit identifier.
    pub fn lookup(&self, name: &str) -> Result<TagId, ModelError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownTag(name.to_string()))
    }

    pub fn contains(&self, tag: TagId) -> bool {
        self.by_tag.contains_key(&tag)
    }

    pub fn name_of(&self, tag: TagId) -> Option<&str> {
        self.by_tag.get(&tag).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TagId)> {
        self.by_name.iter().map(|(n, t)| (n.as_str(), *t))
    }
}

/// A method that produces sensitive data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub tag: TagId,
    /// Permission an app needs to call this source, when any.
    pub permission: Option<String>,
    /// Deterministic mock payload returned by the simulator.
    pub mock_value: String,
}

/// A method through which data can leave the device or be persisted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkSpec {
    /// Permission an app needs to call this sink, when any. Sinks without a
    /// permission (logging, preference writes) are easily overlooked but are
    /// still monitored.
    pub permission: Option<String>,
    /// Whether data passed to this sink can reach the outside of the device.
    pub exfiltrating: bool,
}

/// Source and sink method registry.
#[derive(Debug, Clone, Default)]
pub struct MethodCatalog {
    pub sources: BTreeMap<String, SourceSpec>,
    pub sinks: BTreeMap<String, SinkSpec>,
}

impl MethodCatalog {
    pub fn source(&self, method: &str) -> Option<&SourceSpec> {
        self.sources.get(method)
    }

    pub fn sink(&self, method: &str) -> Option<&SinkSpec> {
        self.sinks.get(method)
    }

    /// Permission needed to generate data tainted through `source_method`,
    /// when the catalog knows the method and it is permission-guarded.
    pub fn source_permission(&self, source_method: &str) -> Option<&str> {
        self.sources
            .get(source_method)
            .and_then(|s| s.permission.as_deref())
    }
}

/// The two catalogs bundled together, as most call sites need both.
#[derive(Debug, Clone)]
pub struct Catalogs {
    pub tags: TagCatalog,
    pub methods: MethodCatalog,
}

impl Default for Catalogs {
    fn default() -> Self {
        let mut tags = TagCatalog::default();
        for (name, value) in PINNED_TAGS {
            tags.register(name, TagId(*value)).expect("pinned tags are unique");
        }
        for (i, name) in GENERATED_TAGS.iter().enumerate() {
            tags.register(name, TagId(0x0002_0001 + i as u32))
                .expect("generated tags are unique");
        }

        let mut methods = MethodCatalog::default();
        let sources: &[(&str, &str, Option<&str>, &str)] = &[
            ("getLatitude", "TAINT_LOCATION_Latitude", Some("ACCESS_FINE_LOCATION"), "31.2281"),
            ("getLongitude", "TAINT_LOCATION_Longitude", Some("ACCESS_FINE_LOCATION"), "121.4806"),
            ("getLastKnownLocation", "TAINT_LOCATION", Some("ACCESS_FINE_LOCATION"), "31.2281,121.4806"),
            ("getDeviceId", "TAINT_DEVICE_ID", Some("READ_PHONE_STATE"), "867530901234566"),
            ("getSubscriberId", "TAINT_IMSI", Some("READ_PHONE_STATE"), "460001234567890"),
            ("getSimSerialNumber", "TAINT_SIM_SERIAL", Some("READ_PHONE_STATE"), "89860012345678901234"),
            ("getLine1Number", "TAINT_PHONE_NUMBER", Some("READ_PHONE_STATE"), "+8613912345678"),
            ("queryContacts", "TAINT_CONTACTS", Some("READ_CONTACTS"), "alice:+8613800138000"),
            ("getSmsInbox", "TAINT_SMS_INBOX", Some("READ_SMS"), "otp 4821 from bank"),
            ("getCallLog", "TAINT_CALL_LOG", Some("READ_CALL_LOG"), "out:+8610086:64s"),
            ("getCalendarEvents", "TAINT_CALENDAR_EVENT", Some("READ_CALENDAR"), "standup 09:30"),
            ("getAccountName", "TAINT_ACCOUNT_NAME", Some("GET_ACCOUNTS"), "user@example.com"),
            ("getNetworkState", "TAINT_network_state", Some("ACCESS_NETWORK_STATE"), "WIFI/CONNECTED"),
            ("getWifiSsid", "TAINT_WIFI_SSID", Some("ACCESS_WIFI_STATE"), "office-2.4G"),
            ("getUserInput", "TAINT_USER_INPUT", None, "typed-text"),
            ("getClipboard", "TAINT_CLIPBOARD", None, "clip-content"),
            ("getAndroidId", "TAINT_ANDROID_ID", None, "9774d56d682e549c"),
            ("getAccelerometer", "TAINT_ACCELEROMETER", None, "0.02,9.81,0.11"),
        ];
        for (method, tag_name, perm, mock) in sources {
            let tag = tags.lookup(tag_name).expect("default source tag registered");
            methods.sources.insert(
                (*method).to_string(),
                SourceSpec {
                    tag,
                    permission: perm.map(str::to_string),
                    mock_value: (*mock).to_string(),
                },
            );
        }

        let sinks: &[(&str, Option<&str>, bool)] = &[
            ("log", None, true),
            ("sendTextMessage", Some("SEND_SMS"), true),
            ("writeFile", Some("WRITE_EXTERNAL_STORAGE"), true),
            ("httpPost", Some("INTERNET"), true),
            ("httpGet", Some("INTERNET"), true),
            ("uploadToCloud", Some("INTERNET"), true),
            ("writeDatabase", None, true),
            ("showNotification", None, false),
            ("vibrate", Some("VIBRATE"), false),
            ("playRingtone", None, false),
        ];
        for (method, perm, exfil) in sinks {
            methods.sinks.insert(
                (*method).to_string(),
                SinkSpec {
                    permission: perm.map(str::to_string),
                    exfiltrating: *exfil,
                },
            );
        }

        Self { tags, methods }
    }
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    format: String,
    version: u32,
    #[serde(default)]
    tags: BTreeMap<String, u32>,
    #[serde(default)]
    sources: BTreeMap<String, SourceEntry>,
    #[serde(default)]
    sinks: BTreeMap<String, SinkEntry>,
}

#[derive(Debug, Deserialize)]
struct SourceEntry {
    tag: String,
    #[serde(default)]
    permission: Option<String>,
    #[serde(default)]
    mock_value: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SinkEntry {
    #[serde(default)]
    permission: Option<String>,
    exfiltrating: bool,
}

impl Catalogs {
    /// Load catalogs from a TOML document of the following shape:
    ///
    /// ```toml
    /// format = "ICCCATALOG"
    /// version = 1
    ///
    /// [tags]
    /// TAINT_LOCATION_Latitude = 0x00010004
    ///
    /// [sources.getLatitude]
    /// tag = "TAINT_LOCATION_Latitude"
    /// permission = "ACCESS_FINE_LOCATION"   # optional
    /// mock_value = "31.2281"                # optional
    ///
    /// [sinks.log]
    /// exfiltrating = true
    /// # permission = "..."                  # optional
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: CatalogFile = toml::from_str(text)
            .map_err(|e| ModelError::CatalogConfig(e.to_string()))?;
        if file.format != "ICCCATALOG" {
            return Err(ModelError::CatalogConfig(format!(
                "bad catalog magic '{}'",
                file.format
            )));
        }
        if file.version != 1 {
            return Err(ModelError::CatalogConfig(format!(
                "unsupported catalog version {}",
                file.version
            )));
        }
        let mut tags = TagCatalog::default();
        for (name, value) in &file.tags {
            tags.register(name, TagId(*value))?;
        }
        let mut methods = MethodCatalog::default();
        for (method, entry) in file.sources {
            let tag = tags.lookup(&entry.tag)?;
            let mock_value = entry
                .mock_value
                .unwrap_or_else(|| format!("{method}-value"));
            methods.sources.insert(
                method,
                SourceSpec {
                    tag,
                    permission: entry.permission,
                    mock_value,
                },
            );
        }
        for (method, entry) in file.sinks {
            methods.sinks.insert(
                method,
                SinkSpec {
                    permission: entry.permission,
                    exfiltrating: entry.exfiltrating,
                },
            );
        }
        Ok(Self { tags, methods })
    }
}
