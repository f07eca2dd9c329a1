/** Console bootstrap: one session against the gateway that served us. */

import { GatewayClient } from "./gateway.js";
import { ConsoleRenderer, wireControls } from "./render.js";
import { ConsoleSession } from "./session.js";

const params = new URLSearchParams(window.location.search);
const gatewayUrl = params.get("gateway") ?? window.location.origin;
const operatorId = params.get("operator") ?? "operator";

const session = new ConsoleSession(new GatewayClient(gatewayUrl), operatorId);
const renderer = new ConsoleRenderer(document, session);

session.onChange((model) => renderer.paint(model));
wireControls(document, session);
renderer.paint(session.model);
void session.run();
