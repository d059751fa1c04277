"""End-to-end secured sensor data pipeline: gateways encrypt and sign, the cloud stores and routes, services verify and decrypt."""

from .cloud import CloudNode, DataStore, QueryPlan, StoredItem, evaluate_query
from .codec import base64url_decode, base64url_encode, canonicalize, encode_wire, parse_wire
from .envelope import (
    VerificationResult,
    decrypt_message,
    encrypt_fields,
    encrypt_readings_array,
    sign_message,
    verify_signature,
)
from .errors import SensorCloudError
from .gateway import GatewayNode
from .keys import Acl, AclEntry, KeyStore, PublicKeyDirectory, ServiceKeyring
from .messages import (
    ActuatorCommand,
    ActuatorResponse,
    ConfigurationMessage,
    DataKeyDownload,
    DataKeyUpload,
    MessageType,
    PublicKeyRequest,
    PublicKeyResponse,
    SensorDataMessage,
    SensorDataRequest,
    SensorReading,
    batch,
    unbatch,
    validate,
)
from .network import SimNetwork
from .primitives import DataKey, SigningKeyPair
from .scenario import demo_scenario, run_scenario
from .service import ServiceNode

__version__ = "0.1.0"
